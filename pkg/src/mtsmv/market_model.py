"""Bond/stock market coefficients and the multi-checkpoint problem definition.

Coefficients are piecewise constant in time and right-continuous at their
breakpoints, so every integral of the rate ``r`` and of the market price of
risk ``beta = gamma (sigma sigma^T)^{-1} gamma^T`` is an exact finite sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import AssumptionViolation, DomainError

DEFAULT_DELTA = 1e-8
_TIME_TOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Violation:
    kind: str
    start: float
    end: float
    detail: str

    def __str__(self):
        return f"{self.kind} on [{self.start:g}, {self.end:g}): {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_assumptions`; empty means the market is valid."""

    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __len__(self):
        return len(self.violations)

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


def schedule(*pairs) -> dict:
    """Wrap ``(start_time, value)`` pairs as a piecewise-constant coefficient."""
    return {"schedule": [(float(s), v) for s, v in pairs]}


def _as_schedule(value, name):
    if not isinstance(value, dict):
        return [(0.0, value)]
    if "schedule" not in value:
        raise DomainError(f"{name}: mapping form needs a 'schedule' key")
    pairs = [(float(s), v) for s, v in value["schedule"]]
    if not pairs:
        raise DomainError(f"{name}: empty schedule")
    times = [s for s, _ in pairs]
    if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
        raise DomainError(f"{name}: schedule start times must be strictly increasing")
    return pairs


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Piecewise-constant market on ``[0, horizon]``.

    Parameters
    ----------
    horizon : float
        Terminal time ``T > 0``.
    breakpoints : sequence of float
        Segment start times, beginning with 0 and strictly increasing below
        ``horizon``.
    rates : array, shape (m,)
        Risk-free rate on each segment.
    drifts : array, shape (m, n)
        Stock appreciation rates on each segment.
    vols : array, shape (m, n, d)
        Volatility matrices on each segment.

    Use :meth:`piecewise` or :meth:`constant` rather than the raw constructor;
    they check the standing assumptions.
    """

    horizon: float
    breakpoints: tuple[float, ...]
    rates: np.ndarray
    drifts: np.ndarray
    vols: np.ndarray
    _knots: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T = float(self.horizon)
        if not (T > 0 and math.isfinite(T)):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon!r}")
        bp = tuple(float(b) for b in self.breakpoints)
        if not bp or bp[0] != 0.0:
            raise DomainError("breakpoints must start at 0")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])) or bp[-1] >= T:
            raise DomainError("breakpoints must be strictly increasing and below the horizon")
        m = len(bp)
        rates = np.asarray(self.rates, dtype=float).reshape(m)
        drifts = np.asarray(self.drifts, dtype=float)
        if drifts.ndim < 2:
            drifts = drifts.reshape(m, -1)
        n = drifts.shape[-1]
        if drifts.shape != (m, n):
            raise DomainError(f"drift schedule has shape {drifts.shape}, expected ({m}, {n})")
        vols = np.asarray(self.vols, dtype=float).reshape(m, n, -1)
        object.__setattr__(self, "horizon", T)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "rates", _readonly(rates))
        object.__setattr__(self, "drifts", _readonly(drifts))
        object.__setattr__(self, "vols", _readonly(vols))
        object.__setattr__(self, "_knots", _readonly(bp + (T,)))

    # -- construction -----------------------------------------------------

    @classmethod
    def piecewise(cls, horizon, rate, drift, vol, *, delta=DEFAULT_DELTA, check=True):
        """Build a market from constant values or schedules.

        Each of ``rate``, ``drift`` and ``vol`` may be a plain value (scalar,
        n-vector, n x d matrix) or ``{"schedule": [(start_time, value), ...]}``
        (see :func:`schedule`) whose first start is 0.  Schedules are merged
        on the union of their breakpoints.
        """
        schedules = [_as_schedule(rate, "rate"), _as_schedule(drift, "drift"), _as_schedule(vol, "vol")]
        for name, sched in zip(("rate", "drift", "vol"), schedules):
            if sched[0][0] != 0.0:
                raise DomainError(f"{name}: schedule must start at time 0")
        starts = sorted({s for sched in schedules for s, _ in sched})
        if starts[-1] >= horizon:
            raise DomainError("schedule breakpoints must lie below the horizon")

        def sample(sched):
            times = [s for s, _ in sched]
            return [sched[int(np.searchsorted(times, t, side="right")) - 1][1] for t in starts]

        r = np.array(sample(schedules[0]), dtype=float).reshape(len(starts))
        b = np.array([np.atleast_1d(np.asarray(v, dtype=float)) for v in sample(schedules[1])])
        n = b.shape[1]
        s = np.array([np.asarray(v, dtype=float).reshape(n, -1) for v in sample(schedules[2])])
        model = cls(horizon, tuple(starts), r, b, s)
        if check:
            report = validate_assumptions(model, delta)
            if not report.ok:
                msg = "; ".join(str(v) for v in report)
                raise AssumptionViolation(f"market violates standing assumptions: {msg}", report)
        return model

    @classmethod
    def constant(cls, horizon, rate, drift, vol, **kwargs):
        return cls.piecewise(horizon, rate, drift, vol, **kwargs)

    # -- shape ------------------------------------------------------------

    @property
    def n_assets(self) -> int:
        return self.drifts.shape[1]

    @property
    def n_noise(self) -> int:
        return self.vols.shape[2]

    @property
    def knots(self) -> np.ndarray:
        """Breakpoints followed by the horizon."""
        return self._knots

    def segment_index(self, t) -> int:
        """Coefficient segment holding ``t`` (right-continuous)."""
        t = self._check_time(t)
        return int(np.searchsorted(self._knots[:-1], t, side="right") - 1)

    def _check_time(self, t):
        t = float(t)
        if not (-_TIME_TOL <= t <= self.horizon + _TIME_TOL):
            raise DomainError(f"time {t!r} outside [0, {self.horizon}]")
        return min(max(t, 0.0), self.horizon)

    # -- per-segment derived quantities ----------------------------------

    @cached_property
    def excess_returns(self) -> np.ndarray:
        return _readonly(self.drifts - self.rates[:, None])

    @cached_property
    def covariances(self) -> np.ndarray:
        return _readonly(np.einsum("mnd,mkd->mnk", self.vols, self.vols))

    @cached_property
    def directions(self) -> np.ndarray:
        """``(sigma sigma^T)^{-1} gamma^T`` per segment; nan where singular."""
        out = np.full(self.drifts.shape, np.nan)
        for j, (cov, g) in enumerate(zip(self.covariances, self.excess_returns)):
            try:
                out[j] = np.linalg.solve(cov, g)
            except np.linalg.LinAlgError:
                pass
        return _readonly(out)

    @cached_property
    def betas(self) -> np.ndarray:
        return _readonly(np.einsum("mn,mn->m", self.excess_returns, self.directions))

    @cached_property
    def _cum_rate(self):
        return _readonly(np.concatenate([[0.0], np.cumsum(self.rates * np.diff(self._knots))]))

    @cached_property
    def _cum_beta(self):
        return _readonly(np.concatenate([[0.0], np.cumsum(self.betas * np.diff(self._knots))]))

    # -- pointwise coefficients -------------------------------------------

    def rate(self, t) -> float:
        return float(self.rates[self.segment_index(t)])

    def excess_return(self, t) -> np.ndarray:
        return self.excess_returns[self.segment_index(t)]

    def beta(self, t) -> float:
        j = self.segment_index(t)
        value = float(self.betas[j])
        if not math.isfinite(value):
            raise AssumptionViolation(f"sigma sigma^T is singular on segment starting at {self.breakpoints[j]:g}")
        return value

    def direction(self, t) -> np.ndarray:
        return self.directions[self.segment_index(t)]

    # -- exact integrals ----------------------------------------------------

    def _integral(self, values, a, b):
        a, b = self._check_time(a), self._check_time(b)
        if a > b:
            raise DomainError(f"integration bounds reversed: a={a!r} > b={b!r}")
        if a == b:
            return 0.0
        knots = self._knots
        lo = int(np.searchsorted(knots, a, side="right") - 1)
        hi = int(np.searchsorted(knots, b, side="left"))
        parts = []
        for j in range(lo, min(hi, len(values))):
            left, right = max(a, knots[j]), min(b, knots[j + 1])
            if right > left:
                parts.append(float(values[j]) * (right - left))
        return math.fsum(parts)

    def integral_rate(self, a, b) -> float:
        return self._integral(self.rates, a, b)

    def integral_beta(self, a, b) -> float:
        return self._integral(self.betas, a, b)

    def cumulative_rate(self, t):
        """Vectorised ``int_0^t r`` (piecewise-linear, so interpolation is exact)."""
        return np.interp(t, self._knots, self._cum_rate)

    def cumulative_beta(self, t):
        return np.interp(t, self._knots, self._cum_beta)

    def to_dict(self) -> dict:
        def sched(values):
            return {"schedule": [[s, np.asarray(v).tolist()] for s, v in zip(self.breakpoints, values)]}

        return {
            "horizon": self.horizon,
            "rate": sched(self.rates),
            "drift": sched(self.drifts),
            "vol": sched(self.vols),
        }


def excess_return(model: MarketModel, t) -> np.ndarray:
    """Excess return vector ``b(t) - r(t) 1``."""
    return model.excess_return(t)


def beta(model: MarketModel, t) -> float:
    """Squared market price of risk ``gamma (sigma sigma^T)^{-1} gamma^T`` at ``t``."""
    return model.beta(t)


def integral_rate(model: MarketModel, a, b) -> float:
    return model.integral_rate(a, b)


def integral_beta(model: MarketModel, a, b) -> float:
    return model.integral_beta(a, b)


def validate_assumptions(model: MarketModel, delta=DEFAULT_DELTA) -> ValidationReport:
    """Check positivity of ``r`` and ``b - r`` and the covariance floor ``delta``.

    Never raises; each violation names the offending coefficient segment.
    """
    found = []
    knots = model.knots
    for j in range(len(model.breakpoints)):
        start, end = float(knots[j]), float(knots[j + 1])
        if not (np.all(np.isfinite(model.drifts[j])) and np.all(np.isfinite(model.vols[j]))
                and math.isfinite(model.rates[j])):
            found.append(Violation("non-finite coefficient", start, end, "coefficient is not finite"))
            continue
        r = float(model.rates[j])
        if not r > 0:
            found.append(Violation("rate <= 0", start, end, f"r = {r:g}"))
        gamma = model.excess_returns[j]
        if not np.all(gamma > 0):
            found.append(Violation("excess return <= 0", start, end, f"b - r = {np.array2string(gamma)}"))
        eig_min = float(np.linalg.eigvalsh(model.covariances[j]).min())
        if not eig_min > delta:
            found.append(
                Violation("covariance floor", start, end, f"min eigenvalue {eig_min:g} <= delta {delta:g}")
            )
    return ValidationReport(tuple(found))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Checkpoint grid ``0 = t_0 < ... < t_N = T``, initial wealth and mean targets."""

    market: MarketModel
    checkpoints: tuple[float, ...]
    initial_wealth: float
    targets: tuple[float, ...]

    def __post_init__(self):
        cps = tuple(float(t) for t in self.checkpoints)
        T = self.market.horizon
        if len(cps) < 2:
            raise DomainError("need at least one checkpoint after t_0 = 0")
        if cps[0] != 0.0:
            raise DomainError(f"checkpoints must start at 0, got {cps[0]!r}")
        if abs(cps[-1] - T) > _TIME_TOL * max(1.0, T):
            raise DomainError(f"last checkpoint {cps[-1]!r} must equal the horizon {T!r}")
        cps = cps[:-1] + (T,)
        if any(b <= a for a, b in zip(cps, cps[1:])):
            raise DomainError("checkpoints must be strictly increasing")
        targets = tuple(float(x) for x in self.targets)
        if len(targets) != len(cps) - 1:
            raise DomainError(f"expected {len(cps) - 1} targets, got {len(targets)}")
        y = float(self.initial_wealth)
        if not y > 0:
            raise DomainError(f"initial wealth must be positive, got {y!r}")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "initial_wealth", y)

    @property
    def n_checkpoints(self) -> int:
        return len(self.checkpoints) - 1

    @property
    def horizon(self) -> float:
        return self.market.horizon

    def segment_of(self, t) -> int:
        """1-based segment ``i`` with ``t`` in ``(t_{i-1}, t_i]``; ``t = 0`` maps to 1."""
        t = self.market._check_time(t)
        i = int(np.searchsorted(self.checkpoints, t, side="left"))
        return max(i, 1)

    @cached_property
    def segment_integrals(self) -> tuple[tuple[float, float], ...]:
        """``(int r, int beta)`` over each ``[t_{i-1}, t_i]``."""
        cps = self.checkpoints
        return tuple(
            (self.market.integral_rate(a, b), self.market.integral_beta(a, b)) for a, b in zip(cps, cps[1:])
        )

    def with_targets(self, targets: Sequence[float]) -> "ProblemSpec":
        return ProblemSpec(self.market, self.checkpoints, self.initial_wealth, tuple(targets))

    def terminal_only(self) -> "ProblemSpec":
        """The single-checkpoint problem keeping only the terminal target."""
        return ProblemSpec(self.market, (0.0, self.horizon), self.initial_wealth, (self.targets[-1],))

    def to_dict(self) -> dict:
        return {
            "market": self.market.to_dict(),
            "checkpoints": list(self.checkpoints),
            "initial_wealth": self.initial_wealth,
            "targets": list(self.targets),
        }
