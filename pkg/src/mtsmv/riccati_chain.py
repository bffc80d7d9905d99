"""Backward chain of scalar Riccati equations joined by jump conditions.

On segment ``i`` (``t_{i-1} <= t <= t_i``)::

    dP_i = (beta - 2r) P_i dt,            P_i(t_i) = mu_i + P_{i+1}(t_i)
    dg_i = [(beta - r) g_i - rho_i r P_i] dt,
                                          g_i(t_i) = g_{i+1}(t_i) + P_{i+1}(t_i) (rho_i - rho_{i+1})

with ``P_{N+1} = g_{N+1} = rho_{N+1} = 0``.  Both equations are linear with
piecewise-constant coefficients, so they are solved by exponentials; the
Runge-Kutta integrator in :func:`verify_against_ode` is only a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .market_model import ProblemSpec

_TOL = 1e-12


@dataclass(frozen=True)
class MultiplierSet:
    """Variance weights ``mu``, mean multipliers ``lam`` and ``rho = lam / mu``."""

    mu: tuple[float, ...]
    lam: tuple[float, ...]

    def __post_init__(self):
        mu = tuple(float(m) for m in self.mu)
        lam = tuple(float(x) for x in self.lam)
        if len(mu) != len(lam) or not mu:
            raise DomainError("mu and lambda must be non-empty and of equal length")
        bad = [i + 1 for i, m in enumerate(mu) if not m > 0]
        if bad:
            raise DomainError(f"variance weights must be positive; mu_{bad[0]} = {mu[bad[0] - 1]!r}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)

    @property
    def rho(self) -> tuple[float, ...]:
        return tuple(l / m for l, m in zip(self.lam, self.mu))

    @property
    def rho_ext(self) -> tuple[float, ...]:
        """``rho`` with the trailing sentinel ``rho_{N+1} = 0``."""
        return self.rho + (0.0,)

    def __len__(self):
        return len(self.mu)

    def scaled(self, c: float) -> "MultiplierSet":
        return MultiplierSet(tuple(c * m for m in self.mu), tuple(c * x for x in self.lam))

    def to_dict(self) -> dict:
        return {"mu": list(self.mu), "lambda": list(self.lam), "rho": list(self.rho)}

    @classmethod
    def from_dict(cls, d) -> "MultiplierSet":
        return cls(tuple(d["mu"]), tuple(d["lambda"]))


@dataclass(frozen=True)
class SegmentSolution:
    """Closed-form data for ``P_i`` and ``g_i`` on ``[start, end]``."""

    index: int
    start: float
    end: float
    mu: float
    rho: float
    p_end: float
    g_end: float
    p_next: float
    g_next: float
    rho_next: float

    @property
    def ratio_end(self) -> float:
        return self.g_end / self.p_end

    @property
    def offset(self) -> float:
        """``rho_i - g_i(t_i)/P_i(t_i)``, the target level the strategy steers toward at ``t_i``."""
        return self.rho - self.ratio_end


class RiccatiChain:
    """Solved chain; evaluates ``P_i(t)``, ``g_i(t)`` and their ratio.

    Segment indices are 1-based as in the model (``i = 1..N``).
    """

    def __init__(self, spec: ProblemSpec, mult: MultiplierSet, segments: Sequence[SegmentSolution]):
        self.spec = spec
        self.mult = mult
        self.segments = tuple(segments)

    def __len__(self):
        return len(self.segments)

    def segment(self, i: int) -> SegmentSolution:
        if not 1 <= i <= len(self.segments):
            raise DomainError(f"segment index {i} outside 1..{len(self.segments)}")
        return self.segments[i - 1]

    def _to_end(self, seg, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < seg.start - _TOL) or np.any(t > seg.end + _TOL):
            raise DomainError(f"time outside segment {seg.index} = [{seg.start:g}, {seg.end:g}]")
        t = np.clip(t, seg.start, seg.end)
        m = self.spec.market
        big_r = m.cumulative_rate(seg.end) - m.cumulative_rate(t)
        big_b = m.cumulative_beta(seg.end) - m.cumulative_beta(t)
        return big_r, big_b

    def P(self, i, t):
        seg = self.segment(i)
        big_r, big_b = self._to_end(seg, t)
        return seg.p_end * np.exp(2.0 * big_r - big_b)

    def g(self, i, t):
        seg = self.segment(i)
        big_r, big_b = self._to_end(seg, t)
        p = seg.p_end * np.exp(2.0 * big_r - big_b)
        return seg.g_end * np.exp(big_r - big_b) + seg.rho * p * -np.expm1(-big_r)

    def ratio(self, i, t):
        seg = self.segment(i)
        big_r, _ = self._to_end(seg, t)
        decay = np.exp(-big_r)
        return seg.ratio_end * decay + seg.rho * (1.0 - decay)

    @property
    def offsets(self) -> tuple[float, ...]:
        return tuple(s.offset for s in self.segments)

    def terminal_values(self) -> list[dict]:
        return [
            {"i": s.index, "P": s.p_end, "g": s.g_end, "ratio": s.ratio_end, "offset": s.offset}
            for s in self.segments
        ]

    def to_dict(self) -> dict:
        return {
            "checkpoints": list(self.spec.checkpoints),
            "multipliers": self.mult.to_dict(),
            "segments": [
                {
                    "i": s.index,
                    "start": s.start,
                    "end": s.end,
                    "P_end": s.p_end,
                    "g_end": s.g_end,
                    "P_start": float(self.P(s.index, s.start)),
                    "g_start": float(self.g(s.index, s.start)),
                    "ratio_end": s.ratio_end,
                    "offset": s.offset,
                }
                for s in self.segments
            ],
        }


def solve_segment(spec: ProblemSpec, i, mu, rho, p_next, g_next, rho_next) -> SegmentSolution:
    """Apply the jump condition at ``t_i`` and return segment ``i``'s closed form."""
    cps = spec.checkpoints
    p_end = mu + p_next
    g_end = g_next + p_next * (rho - rho_next)
    return SegmentSolution(i, cps[i - 1], cps[i], mu, rho, p_end, g_end, p_next, g_next, rho_next)


def start_values(spec: ProblemSpec, seg: SegmentSolution) -> tuple[float, float]:
    """``(P_i(t_{i-1}), g_i(t_{i-1}))`` from the exact segment integrals."""
    big_r, big_b = spec.segment_integrals[seg.index - 1]
    p0 = seg.p_end * math.exp(2.0 * big_r - big_b)
    g0 = seg.g_end * math.exp(big_r - big_b) + seg.rho * p0 * -math.expm1(-big_r)
    return p0, g0


def solve_chain(spec: ProblemSpec, mult: MultiplierSet) -> RiccatiChain:
    """Backward pass ``i = N..1`` through the jump conditions."""
    n = spec.n_checkpoints
    if len(mult) != n:
        raise DomainError(f"multiplier set has {len(mult)} entries, problem has {n} checkpoints")
    rho = mult.rho_ext
    p_next = g_next = 0.0
    segments = []
    for i in range(n, 0, -1):
        seg = solve_segment(spec, i, mult.mu[i - 1], rho[i - 1], p_next, g_next, rho[i])
        segments.append(seg)
        p_next, g_next = start_values(spec, seg)
    return RiccatiChain(spec, mult, segments[::-1])


def ratio(chain: RiccatiChain, i: int, t):
    """``g_i(t) / P_i(t)`` from the closed-form ratio formula."""
    return chain.ratio(i, t)


@dataclass(frozen=True)
class OdeCheck:
    max_dev_p: float
    max_dev_g: float
    n_nodes: int
    step: float

    @property
    def max_deviation(self) -> float:
        return max(self.max_dev_p, self.max_dev_g)


def _rk4_step(a, y, h):
    k1 = a @ y
    k2 = a @ (y + 0.5 * h * k1)
    k3 = a @ (y + 0.5 * h * k2)
    k4 = a @ (y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def verify_against_ode(chain: RiccatiChain, spec: ProblemSpec, mult: MultiplierSet, step: float) -> OdeCheck:
    """Integrate the chain backward with classical RK4 and compare with the closed forms.

    The integrator applies the jump conditions itself, so the only shared
    input with :func:`solve_chain` is the multiplier set.  Every coefficient
    sub-interval gets its own uniform grid with spacing at most ``step``.
    """
    if not step > 0:
        raise DomainError("step must be positive")
    market = spec.market
    cps = spec.checkpoints
    rho = mult.rho_ext
    dev_p = dev_g = 0.0
    nodes = 0
    p_next = g_next = 0.0
    for i in range(spec.n_checkpoints, 0, -1):
        y = np.array([mult.mu[i - 1] + p_next, g_next + p_next * (rho[i - 1] - rho[i])])
        a_i, b_i = cps[i - 1], cps[i]
        inner = [k for k in market.knots if a_i < k < b_i]
        edges = [a_i] + inner + [b_i]
        for left, right in zip(edges[-2::-1], edges[:0:-1]):
            j = market.segment_index(0.5 * (left + right))
            r, bt = float(market.rates[j]), float(market.betas[j])
            a = np.array([[bt - 2 * r, 0.0], [-rho[i - 1] * r, bt - r]])
            n_sub = max(1, math.ceil((right - left) / step - 1e-9))
            h = (right - left) / n_sub
            for k in range(n_sub):
                y = _rk4_step(a, y, -h)
                t = right - (k + 1) * h
                dev_p = max(dev_p, abs(y[0] - float(chain.P(i, t))))
                dev_g = max(dev_g, abs(y[1] - float(chain.g(i, t))))
                nodes += 1
        p_next, g_next = float(y[0]), float(y[1])
    return OdeCheck(dev_p, dev_g, nodes, step)
