"""Optimal feedback strategy, analytic moment paths and the checkpoint frontier.

On segment ``i`` the optimal allocation is

    pi*(t) = (sigma sigma^T)^{-1} gamma^T [h_i(t) - Y(t)],
    h_i(t) = k_i exp(-int_t^{t_i} r),   k_i = rho_i - g_i(t_i)/P_i(t_i),

so wealth is steered toward a moving target level ``h_i``.  Writing
``u = E[Y] - h_i`` the moment equations reduce to

    u(t) = u(s) exp(int_s^t (r - beta))
    Var(t) = exp(int_s^t (2r - beta)) [Var(s) + u(s)^2 (1 - exp(-int_s^t beta))]

which are exact for any coefficient path and need no subtraction of
nearly equal second moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasibleTargetsError
from .market_model import MarketModel, ProblemSpec
from .parameter_solver import DENOMINATOR_GUARD, solve_multipliers
from .riccati_chain import MultiplierSet, RiccatiChain


# ---------------------------------------------------------------------------
# feedback policies


@dataclass(frozen=True, eq=False)
class LinearFeedbackPolicy:
    """``pi(t, y) = gain_i (sigma sigma^T)^{-1} gamma^T [k_i e^{-int_t^{t_i} r} - y]``.

    ``offsets`` are the per-segment levels ``k_i``; ``gains`` scale the
    allocation per segment (1 for the optimal policy).
    """

    market: MarketModel
    checkpoints: tuple[float, ...]
    offsets: tuple[float, ...]
    gains: tuple[float, ...] = ()
    name: str = "policy"

    def __post_init__(self):
        n = len(self.checkpoints) - 1
        if len(self.offsets) != n:
            raise DomainError(f"need {n} offsets, got {len(self.offsets)}")
        gains = tuple(self.gains) or (1.0,) * n
        if len(gains) != n:
            raise DomainError(f"need {n} gains, got {len(gains)}")
        object.__setattr__(self, "offsets", tuple(float(k) for k in self.offsets))
        object.__setattr__(self, "gains", tuple(float(g) for g in gains))
        object.__setattr__(self, "checkpoints", tuple(float(t) for t in self.checkpoints))

    @classmethod
    def from_chain(cls, chain: RiccatiChain, name="optimal") -> "LinearFeedbackPolicy":
        spec = chain.spec
        return cls(spec.market, spec.checkpoints, chain.offsets, name=name)

    def segment_of(self, t) -> int:
        i = int(np.searchsorted(self.checkpoints, float(t), side="left"))
        return min(max(i, 1), len(self.offsets))

    def target(self, t, segment=None):
        """Moving target level ``k_i exp(-int_t^{t_i} r)``; ``t`` may be an array within one segment."""
        i = self.segment_of(t) if segment is None else segment
        m = self.market
        to_end = m.cumulative_rate(self.checkpoints[i]) - m.cumulative_rate(t)
        return self.offsets[i - 1] * np.exp(-to_end)

    def direction(self, t, segment=None) -> np.ndarray:
        """Allocation per unit shortfall, ``gain_i (sigma sigma^T)^{-1} gamma^T``."""
        i = self.segment_of(t) if segment is None else segment
        return self.gains[i - 1] * self.market.direction(t)

    def allocation(self, t, y, segment=None):
        """Risky-asset holdings; shape ``(n,)`` for scalar ``y`` or ``(len(y), n)``."""
        i = self.segment_of(t) if segment is None else segment
        shortfall = self.target(t, i) - np.asarray(y, dtype=float)
        return np.multiply.outer(shortfall, self.direction(t, i))

    __call__ = allocation

    def perturbed(self, offset_scale=1.0, gain_scale=1.0, name=None) -> "LinearFeedbackPolicy":
        """Scale offsets and/or gains, either uniformly or per segment."""
        n = len(self.offsets)
        os_ = np.broadcast_to(np.asarray(offset_scale, dtype=float), (n,))
        gs = np.broadcast_to(np.asarray(gain_scale, dtype=float), (n,))
        return replace(
            self,
            offsets=tuple(float(k * s) for k, s in zip(self.offsets, os_)),
            gains=tuple(float(g * s) for g, s in zip(self.gains, gs)),
            name=name or f"{self.name}[offset*{offset_scale}, gain*{gain_scale}]",
        )


def optimal_policy(chain: RiccatiChain) -> LinearFeedbackPolicy:
    return LinearFeedbackPolicy.from_chain(chain)


def classical_policy(spec: ProblemSpec) -> LinearFeedbackPolicy:
    """Terminal-only mean-variance policy aiming at ``L_N`` (ignores intermediate targets)."""
    _, chain, _ = solve_multipliers(spec.terminal_only())
    return LinearFeedbackPolicy.from_chain(chain, name="classical")


def optimal_control(chain: RiccatiChain, mult: MultiplierSet, spec: ProblemSpec, t, y):
    """Optimal risky allocation at time ``t`` for wealth ``y``.

    The segment is resolved by ``t`` in ``(t_{i-1}, t_i]``, with ``t = 0`` in
    segment 1.
    """
    if len(mult) != len(chain):
        raise DomainError("multiplier set does not match the chain")
    i = spec.segment_of(t)
    return LinearFeedbackPolicy.from_chain(chain).allocation(t, y, i)


# ---------------------------------------------------------------------------
# analytic moments


@dataclass(frozen=True, eq=False)
class PolicyReport:
    """Analytic moments of the optimally controlled wealth."""

    times: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    variance: np.ndarray
    checkpoints: tuple[float, ...]
    segment_offsets: tuple[float, ...]
    checkpoint_means: tuple[float, ...]
    checkpoint_variances: tuple[float, ...]
    checkpoint_second_moments: tuple[float, ...]
    multipliers: Optional[MultiplierSet] = None
    baseline: Optional["PolicyReport"] = field(default=None)

    def with_baseline(self, baseline: "PolicyReport") -> "PolicyReport":
        if not np.array_equal(baseline.times, self.times):
            raise DomainError("baseline must be sampled on the same grid")
        return replace(self, baseline=baseline)

    def to_dict(self, include_paths=False) -> dict:
        out = {
            "checkpoints": list(self.checkpoints),
            "segment_offsets": list(self.segment_offsets),
            "checkpoint_means": list(self.checkpoint_means),
            "checkpoint_variances": list(self.checkpoint_variances),
        }
        if self.multipliers is not None:
            out["multipliers"] = self.multipliers.to_dict()
        if include_paths:
            out["paths"] = {
                "t": self.times.tolist(),
                "mean": self.mean.tolist(),
                "second_moment": self.second_moment.tolist(),
                "variance": self.variance.tolist(),
            }
        if self.baseline is not None:
            out["classical_baseline"] = self.baseline.to_dict(include_paths)
        return out


def report_grid(horizon: float, step: float, checkpoints: Sequence[float]) -> np.ndarray:
    """Uniform grid of spacing ``step`` with every checkpoint inserted exactly."""
    if not step > 0:
        raise DomainError("grid step must be positive")
    n = int(round(horizon / step))
    if n >= 1 and abs(n * step - horizon) <= 1e-9 * horizon:
        base = np.linspace(0.0, horizon, n + 1)
    else:
        base = np.append(np.arange(0.0, horizon, step), horizon)
    cps = np.asarray(checkpoints, dtype=float)
    near = np.min(np.abs(base[:, None] - cps[None, :]), axis=1) < 1e-9 * max(1.0, horizon)
    return np.union1d(base[~near], cps)


def _checkpoint_moments(spec: ProblemSpec, offsets):
    """Exact checkpoint recursions: mean, second moment and variance at ``t_0..t_N``."""
    y = spec.initial_wealth
    means, seconds, variances = [y], [y * y], [0.0]
    for (big_r, big_b), k in zip(spec.segment_integrals, offsets):
        m0, s0, v0 = means[-1], seconds[-1], variances[-1]
        grow = -math.expm1(-big_b)
        means.append(m0 * math.exp(big_r - big_b) + k * grow)
        seconds.append(s0 * math.exp(2 * big_r - big_b) + k * k * grow)
        u0 = m0 - k * math.exp(-big_r)
        variances.append(math.exp(2 * big_r - big_b) * (v0 + u0 * u0 * grow))
    return means, seconds, variances


def moments_at(spec: ProblemSpec, offsets: Sequence[float], times) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the controlled wealth at arbitrary ``times``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    means, _, variances = _checkpoint_moments(spec, offsets)
    cps = np.asarray(spec.checkpoints)
    seg = np.clip(np.searchsorted(cps, times, side="left"), 1, spec.n_checkpoints)
    m = spec.market
    cr, cb = m.cumulative_rate(times), m.cumulative_beta(times)
    cr_start, cb_start = m.cumulative_rate(cps[seg - 1]), m.cumulative_beta(cps[seg - 1])
    cr_end = m.cumulative_rate(cps[seg])
    k = np.asarray(offsets, dtype=float)[seg - 1]
    m0 = np.asarray(means)[seg - 1]
    v0 = np.asarray(variances)[seg - 1]
    u0 = m0 - k * np.exp(-(cr_end - cr_start))
    elapsed_r, elapsed_b = cr - cr_start, cb - cb_start
    mean = k * np.exp(-(cr_end - cr)) + u0 * np.exp(elapsed_r - elapsed_b)
    var = np.exp(2 * elapsed_r - elapsed_b) * (v0 + u0 * u0 * -np.expm1(-elapsed_b))
    return mean, var


def propagate_moments(chain: RiccatiChain, mult: MultiplierSet, spec: ProblemSpec, grid_step=0.01) -> PolicyReport:
    """Closed-form mean / second moment / variance paths under the optimal strategy."""
    offsets = chain.offsets
    means, seconds, variances = _checkpoint_moments(spec, offsets)
    times = report_grid(spec.horizon, grid_step, spec.checkpoints)
    mean, var = moments_at(spec, offsets, times)
    return PolicyReport(
        times=times,
        mean=mean,
        second_moment=var + mean * mean,
        variance=var,
        checkpoints=spec.checkpoints,
        segment_offsets=tuple(offsets),
        checkpoint_means=tuple(means[1:]),
        checkpoint_variances=tuple(variances[1:]),
        checkpoint_second_moments=tuple(seconds[1:]),
        multipliers=mult,
    )


def frontier_recursion(spec: ProblemSpec, means: Optional[Sequence[float]] = None) -> tuple[float, ...]:
    """Minimal checkpoint variances for the given checkpoint means.

    ``Var_i = Var_{i-1} e^{int (2r - beta)} + (L_i - L_{i-1} e^{int r})^2 / (e^{int beta} - 1)``
    with ``Var_0 = 0`` and ``L_0 = y``.
    """
    means = spec.targets if means is None else tuple(float(x) for x in means)
    if len(means) != spec.n_checkpoints:
        raise DomainError(f"expected {spec.n_checkpoints} means, got {len(means)}")
    prev_mean, var = spec.initial_wealth, 0.0
    out = []
    for i, ((big_r, big_b), level) in enumerate(zip(spec.segment_integrals, means), start=1):
        gap = level - prev_mean * math.exp(big_r)
        if not gap > DENOMINATOR_GUARD * max(1.0, abs(level)):
            raise InfeasibleTargetsError(
                f"mean at checkpoint {i} does not exceed riskless growth", index=i, inequality="growth"
            )
        var = var * math.exp(2 * big_r - big_b) + gap * gap / math.expm1(big_b)
        out.append(var)
        prev_mean = level
    return tuple(out)


def classical_baseline(spec: ProblemSpec, grid_step=0.01) -> PolicyReport:
    """Terminal-only mean-variance strategy aiming at ``L_N`` on the same grid."""
    single = spec.terminal_only()
    mult, chain, _ = solve_multipliers(single)
    report = propagate_moments(chain, mult, single, grid_step)
    times = report_grid(spec.horizon, grid_step, spec.checkpoints)
    if not np.array_equal(times, report.times):
        mean, var = moments_at(single, chain.offsets, times)
        report = replace(report, times=times, mean=mean, variance=var, second_moment=var + mean * mean)
    return report


def classical_frontier(spec: ProblemSpec, t, mean) -> float:
    """``(E - y e^{int_0^t r})^2 / (e^{int_0^t beta} - 1)``, the single-period frontier at ``t``."""
    m = spec.market
    big_r, big_b = m.integral_rate(0.0, t), m.integral_beta(0.0, t)
    return (mean - spec.initial_wealth * math.exp(big_r)) ** 2 / math.expm1(big_b)


# ---------------------------------------------------------------------------
# two-checkpoint comparison


@dataclass(frozen=True)
class Comparison:
    var_star: tuple[float, float]
    var_classical: tuple[float, float]
    classical_mean_t1: float
    window: tuple[float, float]
    l1: float

    @property
    def sum_star(self) -> float:
        return self.var_star[0] + self.var_star[1]

    @property
    def sum_classical(self) -> float:
        return self.var_classical[0] + self.var_classical[1]

    @property
    def first_smaller(self) -> bool:
        return self.var_star[0] < self.var_classical[0]

    @property
    def second_larger(self) -> bool:
        return self.var_star[1] > self.var_classical[1]

    @property
    def sum_dominance(self) -> bool:
        return self.sum_star < self.sum_classical

    @property
    def in_window(self) -> bool:
        lo, hi = self.window
        return lo <= self.l1 < hi

    def to_dict(self) -> dict:
        return {
            "L1": self.l1,
            "var_star": list(self.var_star),
            "var_classical": list(self.var_classical),
            "sum_star": self.sum_star,
            "sum_classical": self.sum_classical,
            "classical_mean_t1": self.classical_mean_t1,
            "window": list(self.window),
            "in_window": self.in_window,
            "var_star_1_lt_classical": self.first_smaller,
            "var_star_2_gt_classical": self.second_larger,
            "sum_dominance": self.sum_dominance,
        }


def classical_mean(spec: ProblemSpec, t) -> float:
    """Mean of the terminal-only optimal wealth at time ``t``."""
    single = spec.terminal_only()
    (big_r, big_b), = single.segment_integrals
    y, level = spec.initial_wealth, spec.targets[-1]
    # offset k = lambda/mu of the single-checkpoint problem
    k = (level * math.exp(big_b) - y * math.exp(big_r)) / math.expm1(big_b)
    m = spec.market
    to_end = m.integral_rate(t, spec.horizon)
    r0, b0 = m.integral_rate(0.0, t), m.integral_beta(0.0, t)
    return k * math.exp(-to_end) + (y - k * math.exp(-big_r)) * math.exp(r0 - b0)


def _classical_two(spec: ProblemSpec) -> tuple[float, float, float]:
    """Terminal-only optimum on a two-checkpoint grid: ``(E[X(t_1)], Var X(t_1), Var X(t_2))``."""
    y = spec.initial_wealth
    l2 = spec.targets[1]
    (r1, b1), (r2, b2) = spec.segment_integrals
    big_r, big_b = r1 + r2, b1 + b2
    k = (l2 * math.exp(big_b) - y * math.exp(big_r)) / math.expm1(big_b)
    e1 = k * math.exp(-r2) + (y - k * math.exp(-big_r)) * math.exp(r1 - b1)
    v1 = (e1 - y * math.exp(r1)) ** 2 / math.expm1(b1)
    v2 = (l2 - y * math.exp(big_r)) ** 2 / math.expm1(big_b)
    return e1, v1, v2


def ass1_flags(spec: ProblemSpec) -> tuple[bool, bool]:
    """Two-checkpoint admissibility: ``(growth, L_1 < E[classical wealth at t_1])``.

    With unit segments the second flag is ``(L_2 - L_1 e^r) e^beta > (L_1 - e^r) e^r``.
    """
    if spec.n_checkpoints != 2:
        raise DomainError("comparison is defined for two checkpoints")
    y = spec.initial_wealth
    l1, l2 = spec.targets
    (r1, _), (r2, _) = spec.segment_integrals
    growth = l2 > l1 * math.exp(r2) and l1 > y * math.exp(r1)
    below = l1 < _classical_two(spec)[0]
    return growth, below


def compare_models(spec: ProblemSpec) -> Comparison:
    """Checkpoint variances of the two-checkpoint optimum vs the terminal-only optimum."""
    growth, below = ass1_flags(spec)
    if not (growth and below):
        which = "growth" if not growth else "L_1 < classical mean at t_1"
        raise InfeasibleTargetsError(f"two-checkpoint comparison needs ({which})", index=1, inequality="ass-1")
    var_star = frontier_recursion(spec)
    e1, v1, v2 = _classical_two(spec)

    y = spec.initial_wealth
    l2 = spec.targets[1]
    (r1, b1), (r2, b2) = spec.segment_integrals
    # minimiser of Var*(1) + Var*(2) over L_1
    a = (1.0 + math.exp(2 * r2 - b2)) / math.expm1(b1)
    c = 1.0 / math.expm1(b2)
    lo = (a * y * math.exp(r1) + c * math.exp(r2) * l2) / (a + c * math.exp(2 * r2))
    return Comparison(
        var_star=(var_star[0], var_star[1]),
        var_classical=(v1, v2),
        classical_mean_t1=e1,
        window=(lo, e1),
        l1=spec.targets[0],
    )
