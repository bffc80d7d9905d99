"""Monte Carlo simulation of the controlled wealth SDE.

    dY = [r Y + gamma . pi] dt + pi sigma dW,   Y(0) = y

Euler-Maruyama with the control frozen at the left end of each step.  Paths
are processed in fixed blocks of ``BLOCK_SIZE``; block ``j`` draws its
Gaussian increments from a Philox counter-based generator keyed by
``(seed, j)``, so the increment used by path ``p`` at step ``k`` depends only
on ``(seed, p, k)``.  Any number of policies can be driven by the same
increments (common random numbers), which is how sweeps and optimality
comparisons are run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, InfeasibleTargetsError, SimulationError
from .market_model import ProblemSpec
from .parameter_solver import solve_multipliers
from .riccati_chain import MultiplierSet
from .strategy import LinearFeedbackPolicy

BLOCK_SIZE = 1024
QUANTILE_LEVELS = (0.05, 0.25, 0.5, 0.75, 0.95)
MAX_FLAGGED_FRACTION = 1e-3
_NOISE_CHUNK = 256
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 10_000
    step: float = 1e-3
    seed: int = 0
    record_step: float = 1e-2
    mdd_horizons: Optional[tuple[float, ...]] = None
    fan_paths: int = 20_000
    workers: int = 1

    def __post_init__(self):
        if int(self.n_paths) <= 0:
            raise DomainError("n_paths must be positive")
        if not self.step > 0 or not self.record_step > 0:
            raise DomainError("step and record_step must be positive")
        ratio = self.record_step / self.step
        if abs(ratio - round(ratio)) > _GRID_TOL * max(1.0, ratio) or round(ratio) < 1:
            raise DomainError("record_step must be a whole multiple of step")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must fit in 64 bits")
        object.__setattr__(self, "n_paths", int(self.n_paths))
        object.__setattr__(self, "seed", int(self.seed))
        if self.mdd_horizons is not None:
            object.__setattr__(self, "mdd_horizons", tuple(float(h) for h in self.mdd_horizons))

    def to_dict(self) -> dict:
        return {
            "n_paths": self.n_paths,
            "step": self.step,
            "seed": self.seed,
            "record_step": self.record_step,
            "mdd_horizons": None if self.mdd_horizons is None else list(self.mdd_horizons),
        }


@dataclass(frozen=True)
class _Grid:
    n_steps: int
    step: float
    checkpoint_idx: tuple[int, ...]
    record_idx: np.ndarray
    horizon_idx: tuple[int, ...]
    horizons: tuple[float, ...]

    @property
    def times(self):
        return np.arange(self.n_steps + 1) * self.step

    @property
    def record_times(self):
        return self.record_idx * self.step


def _on_grid(t, step):
    k = t / step
    return abs(k - round(k)) <= _GRID_TOL * max(1.0, k)


def build_grid(spec: ProblemSpec, config: SimulationConfig) -> _Grid:
    step = config.step
    for a, b in zip(spec.checkpoints, spec.checkpoints[1:]):
        if not _on_grid(b - a, step):
            raise DomainError(f"step {step} does not divide the checkpoint gap [{a}, {b}]")
    n_steps = int(round(spec.horizon / step))
    cp_idx = tuple(int(round(t / step)) for t in spec.checkpoints[1:])
    every = int(round(config.record_step / step))
    rec = set(range(0, n_steps + 1, every)) | {n_steps} | set(cp_idx)
    horizons = config.mdd_horizons if config.mdd_horizons is not None else spec.checkpoints[1:]
    rec_sorted = np.array(sorted(rec))
    h_idx = []
    for h in horizons:
        if not 0 < h <= spec.horizon + 1e-12:
            raise DomainError(f"drawdown horizon {h} outside (0, T]")
        k = int(round(h / step)) if _on_grid(h, step) else int(math.floor(h / step))
        h_idx.append(int(rec_sorted[np.searchsorted(rec_sorted, k, side="right") - 1]))
    return _Grid(n_steps, step, cp_idx, rec_sorted, tuple(h_idx), tuple(horizons))


# ---------------------------------------------------------------------------
# noise


def block_generator(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for path block ``block``."""
    return np.random.Generator(np.random.Philox(key=(int(seed) & (2**64 - 1)) | (int(block) << 64)))


def _noise_chunks(seed, block, n_steps, n_noise):
    rng = block_generator(seed, block)
    done = 0
    while done < n_steps:
        m = min(_NOISE_CHUNK, n_steps - done)
        yield done, rng.standard_normal((m, BLOCK_SIZE, n_noise))
        done += m


# ---------------------------------------------------------------------------
# per-step coefficient schedules


def _step_segments(spec, grid):
    mid = (np.arange(grid.n_steps) + 0.5) * grid.step
    cps = np.asarray(spec.checkpoints)
    seg = np.clip(np.searchsorted(cps, mid, side="left"), 1, spec.n_checkpoints)
    coef = np.searchsorted(spec.market.knots[:-1], mid, side="right") - 1
    return seg, coef


def _linear_schedule(policies, spec, grid):
    """Targets, drift loadings and noise loadings per (policy, step).

    Each policy resolves its own segment from its own checkpoint grid, so a
    single-target policy can run on a multi-checkpoint problem.
    """
    market = spec.market
    _, coef = _step_segments(spec, grid)
    mid = (np.arange(grid.n_steps) + 0.5) * grid.step
    cr = market.cumulative_rate(np.arange(grid.n_steps) * grid.step)
    n_pol = len(policies)
    targets = np.empty((n_pol, grid.n_steps))
    loads = np.empty((n_pol, grid.n_steps))
    noise = np.empty((n_pol, grid.n_steps, market.n_noise))
    direction = market.directions[coef]  # (steps, n)
    drift_load = np.einsum("kn,kn->k", direction, market.excess_returns[coef])
    noise_load = np.einsum("kn,knd->kd", direction, market.vols[coef])
    for p, pol in enumerate(policies):
        cps = np.asarray(pol.checkpoints)
        seg = np.clip(np.searchsorted(cps, mid, side="left"), 1, len(pol.offsets))
        decay = np.exp(-(market.cumulative_rate(cps[seg]) - cr))
        targets[p] = np.asarray(pol.offsets)[seg - 1] * decay
        gains = np.asarray(pol.gains)[seg - 1]
        loads[p] = gains * drift_load
        noise[p] = gains[:, None] * noise_load
    return targets, loads, noise, market.rates[coef]


# ---------------------------------------------------------------------------
# block kernel


@dataclass
class _BlockResult:
    checkpoints: np.ndarray  # (P, b, N)
    mdd: np.ndarray  # (P, b, H)
    fan: np.ndarray  # (P, f, R)


def _simulate_block(job):
    # overflow is detected afterwards and reported as flagged paths
    with np.errstate(over="ignore", invalid="ignore"):
        return _run_block(job)


def _run_block(job):
    policies, spec, grid, seed, block, n_in_block, n_fan = job
    market = spec.market
    n_pol = len(policies)
    linear = all(isinstance(p, LinearFeedbackPolicy) for p in policies)
    if linear:
        targets, loads, noise_loads, rates = _linear_schedule(policies, spec, grid)
    else:
        seg, coef = _step_segments(spec, grid)
        rates = market.rates[coef]
    dt = grid.step
    sq = math.sqrt(dt)
    y = np.full((n_pol, n_in_block), spec.initial_wealth)
    run_max = y.copy()
    draw = np.zeros_like(y)
    cp_pos = {k: j for j, k in enumerate(grid.checkpoint_idx)}
    rec_pos = {int(k): j for j, k in enumerate(grid.record_idx)}
    h_pos = {}
    for j, k in enumerate(grid.horizon_idx):
        h_pos.setdefault(k, []).append(j)
    out_cp = np.empty((n_pol, n_in_block, len(cp_pos)))
    out_md = np.empty((n_pol, n_in_block, len(grid.horizon_idx)))
    out_fan = np.empty((n_pol, n_fan, len(rec_pos)))
    if n_fan:
        out_fan[:, :, 0] = y[:, :n_fan]
    one_noise = market.n_noise == 1
    for start, z_chunk in _noise_chunks(seed, block, grid.n_steps, market.n_noise):
        z_chunk = z_chunk[:, :n_in_block, :]
        for off in range(z_chunk.shape[0]):
            k = start + off
            z = z_chunk[off]
            r = rates[k]
            if linear:
                gap = targets[:, k, None] - y
                if one_noise:
                    shock = noise_loads[:, k, 0, None] * z[:, 0]
                else:
                    shock = noise_loads[:, k, :] @ z.T
                y = y + (r * y + loads[:, k, None] * gap) * dt + gap * shock * sq
            else:
                t = k * dt
                i, j = int(seg[k]), int(coef[k])
                new = np.empty_like(y)
                for p, pol in enumerate(policies):
                    pi = np.asarray(pol.allocation(t, y[p], i)).reshape(n_in_block, -1)
                    drift = r * y[p] + pi @ market.excess_returns[j]
                    diff = np.einsum("bd,bd->b", pi @ market.vols[j], z)
                    new[p] = y[p] + drift * dt + diff * sq
                y = new
            k1 = k + 1
            if k1 in rec_pos:
                np.maximum(run_max, y, out=run_max)
                np.maximum(draw, run_max - y, out=draw)
                if n_fan:
                    out_fan[:, :, rec_pos[k1]] = y[:, :n_fan]
                for j in h_pos.get(k1, ()):
                    out_md[:, :, j] = draw
            if k1 in cp_pos:
                out_cp[:, :, cp_pos[k1]] = y
    return _BlockResult(out_cp, out_md, out_fan)


# ---------------------------------------------------------------------------
# reports


def _moment_stats(x):
    n = x.shape[0]
    mean = x.mean(axis=0)
    dev = x - mean
    var = (dev**2).sum(axis=0) / (n - 1) if n > 1 else np.zeros_like(mean)
    m4 = (dev**4).mean(axis=0)
    mean_se = np.sqrt(var / n)
    var_se = np.sqrt(np.maximum(m4 - var**2 * (n - 3) / max(n - 1, 1), 0.0) / n)
    return mean, mean_se, var, var_se


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Sample statistics of one simulated policy.

    ``samples`` and ``mdd_samples`` hold per-path values (``nan`` for flagged
    paths) so that reports from a common-noise run can be paired.
    """

    policy_name: str
    config: SimulationConfig
    checkpoints: tuple[float, ...]
    samples: np.ndarray
    mdd_samples: np.ndarray
    mdd_horizons: tuple[float, ...]
    record_times: np.ndarray
    fan_samples: np.ndarray
    valid: np.ndarray = field(repr=False)

    @property
    def n_paths(self) -> int:
        return self.samples.shape[0]

    @property
    def n_flagged(self) -> int:
        return int((~self.valid).sum())

    def _stats(self):
        return _moment_stats(self.samples[self.valid])

    @property
    def checkpoint_mean(self) -> np.ndarray:
        return self._stats()[0]

    @property
    def checkpoint_mean_se(self) -> np.ndarray:
        return self._stats()[1]

    @property
    def checkpoint_variance(self) -> np.ndarray:
        return self._stats()[2]

    @property
    def checkpoint_variance_se(self) -> np.ndarray:
        return self._stats()[3]

    @property
    def mdd_mean(self) -> np.ndarray:
        return self.mdd_samples[self.valid].mean(axis=0)

    @property
    def mdd_se(self) -> np.ndarray:
        x = self.mdd_samples[self.valid]
        return x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])

    @property
    def quantile_fan(self) -> np.ndarray:
        """Shape ``(len(record_times), 5)`` quantiles at levels :data:`QUANTILE_LEVELS`."""
        if self.fan_samples.shape[0] == 0:
            return np.full((len(self.record_times), len(QUANTILE_LEVELS)), np.nan)
        keep = self.valid[: self.fan_samples.shape[0]]
        return np.quantile(self.fan_samples[keep], QUANTILE_LEVELS, axis=0).T

    def to_dict(self) -> dict:
        mean, mean_se, var, var_se = self._stats()
        return {
            "policy": self.policy_name,
            "config": self.config.to_dict(),
            "checkpoints": list(self.checkpoints),
            "n_paths": self.n_paths,
            "n_flagged": self.n_flagged,
            "checkpoint_mean": mean.tolist(),
            "checkpoint_mean_se": mean_se.tolist(),
            "checkpoint_variance": var.tolist(),
            "checkpoint_variance_se": var_se.tolist(),
            "mdd_horizons": list(self.mdd_horizons),
            "mdd_mean": self.mdd_mean.tolist(),
            "mdd_se": self.mdd_se.tolist(),
            "quantile_levels": list(QUANTILE_LEVELS),
            "record_times": self.record_times.tolist(),
            "quantile_fan": self.quantile_fan.tolist(),
        }


def simulate_many(policies: Sequence, spec: ProblemSpec, config: SimulationConfig) -> list[SimulationReport]:
    """Simulate several policies on identical Gaussian increments."""
    policies = list(policies)
    if not policies:
        return []
    grid = build_grid(spec, config)
    n = config.n_paths
    n_blocks = -(-n // BLOCK_SIZE)
    jobs = []
    for b in range(n_blocks):
        lo = b * BLOCK_SIZE
        size = min(BLOCK_SIZE, n - lo)
        n_fan = max(0, min(size, config.fan_paths - lo))
        jobs.append((policies, spec, grid, config.seed, b, size, n_fan))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_simulate_block, jobs))
    else:
        results = [_simulate_block(job) for job in jobs]

    cp = np.concatenate([r.checkpoints for r in results], axis=1)
    md = np.concatenate([r.mdd for r in results], axis=1)
    fan = np.concatenate([r.fan for r in results], axis=1)
    reports = []
    for p, pol in enumerate(policies):
        valid = np.isfinite(cp[p]).all(axis=1) & np.isfinite(md[p]).all(axis=1)
        flagged = int((~valid).sum())
        if flagged > MAX_FLAGGED_FRACTION * n:
            raise SimulationError(f"{flagged} of {n} paths produced non-finite wealth for {getattr(pol, 'name', p)}")
        samples = np.where(valid[:, None], cp[p], np.nan)
        reports.append(
            SimulationReport(
                policy_name=getattr(pol, "name", f"policy{p}"),
                config=config,
                checkpoints=spec.checkpoints,
                samples=samples,
                mdd_samples=np.where(valid[:, None], md[p], np.nan),
                mdd_horizons=grid.horizons,
                record_times=grid.record_times,
                fan_samples=fan[p],
                valid=valid,
            )
        )
    return reports


def simulate(policy, spec: ProblemSpec, config: SimulationConfig) -> SimulationReport:
    """Simulate one feedback policy; see :func:`simulate_many`."""
    return simulate_many([policy], spec, config)[0]


# ---------------------------------------------------------------------------
# drawdown


def max_drawdown(path, h=None, times=None):
    """Largest drop from a running peak, ``max_{t <= s <= h} Y(t) - Y(s)``.

    ``path`` is a 1-D trajectory or a 2-D array with one path per row.  When
    ``h`` is given, ``times`` must give the sample times and only samples
    with ``time <= h`` enter.
    """
    x = np.asarray(path, dtype=float)
    if x.shape[-1] == 0:
        raise DomainError("empty path")
    if h is not None:
        if times is None:
            raise DomainError("times are required when a horizon is given")
        times = np.asarray(times, dtype=float)
        keep = times <= h + 1e-12
        if not keep.any():
            raise DomainError(f"no samples at or before horizon {h}")
        x = x[..., keep]
    peak = np.maximum.accumulate(x, axis=-1)
    return np.max(peak - x, axis=-1)


# ---------------------------------------------------------------------------
# objective estimates


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float


def j4_samples(report: SimulationReport, mult: MultiplierSet) -> np.ndarray:
    """Per-path ``sum_i mu_i/2 (Y(t_i) - rho_i)^2``."""
    mu = np.asarray(mult.mu)
    rho = np.asarray(mult.rho)
    return 0.5 * ((report.samples - rho) ** 2 * mu).sum(axis=1)


def j4_estimate(report: SimulationReport, mult: MultiplierSet) -> Estimate:
    x = j4_samples(report, mult)[report.valid]
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)))


def j4_difference(report: SimulationReport, reference: SimulationReport, mult: MultiplierSet) -> Estimate:
    """Paired estimate of ``J4(report) - J4(reference)`` over common paths."""
    both = report.valid & reference.valid
    d = (j4_samples(report, mult) - j4_samples(reference, mult))[both]
    return Estimate(float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)))


# ---------------------------------------------------------------------------
# drawdown sweep over the first target


@dataclass(frozen=True)
class SweepRow:
    theta: float
    l1: float
    feasible: bool
    reason: str = ""
    mdd_mean: tuple[float, ...] = ()
    mdd_se: tuple[float, ...] = ()


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    horizons: tuple[float, ...]

    @property
    def feasible_rows(self) -> tuple[SweepRow, ...]:
        return tuple(r for r in self.rows if r.feasible)

    def column(self, j) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = self.feasible_rows
        return (
            np.array([r.theta for r in rows]),
            np.array([r.mdd_mean[j] for r in rows]),
            np.array([r.mdd_se[j] for r in rows]),
        )


def theta_targets(spec: ProblemSpec, theta: float) -> tuple[float, float]:
    """``L_1 = y exp(theta rbar)`` with ``rbar`` the average rate on ``[0, t_1]``; ``L_2`` kept."""
    t1 = spec.checkpoints[1]
    rbar = spec.market.integral_rate(0.0, t1) / t1
    return spec.initial_wealth * math.exp(theta * rbar), spec.targets[1]


def mdd_sweep(spec: ProblemSpec, theta_grid: Sequence[float], config: SimulationConfig) -> SweepTable:
    """Average maximum drawdown at each checkpoint as the first target moves.

    Infeasible ``theta`` entries are reported and skipped; all feasible ones
    share the same Gaussian increments.
    """
    if spec.n_checkpoints != 2:
        raise DomainError("the drawdown sweep is defined for two checkpoints")
    rows, policies, where = [], [], []
    for theta in theta_grid:
        l1, l2 = theta_targets(spec, float(theta))
        try:
            _, chain, _ = solve_multipliers(spec.with_targets((l1, l2)))
        except InfeasibleTargetsError as exc:
            rows.append(SweepRow(float(theta), l1, False, str(exc)))
            continue
        where.append(len(rows))
        rows.append(SweepRow(float(theta), l1, True))
        policies.append(LinearFeedbackPolicy.from_chain(chain, name=f"theta={theta:.6g}"))
    cfg = SimulationConfig(
        n_paths=config.n_paths,
        step=config.step,
        seed=config.seed,
        record_step=config.record_step,
        mdd_horizons=config.mdd_horizons,
        fan_paths=0,
        workers=config.workers,
    )
    for idx, rep in zip(where, simulate_many(policies, spec, cfg)):
        r = rows[idx]
        rows[idx] = SweepRow(r.theta, r.l1, True, "", tuple(rep.mdd_mean.tolist()), tuple(rep.mdd_se.tolist()))
    horizons = cfg.mdd_horizons if cfg.mdd_horizons is not None else spec.checkpoints[1:]
    return SweepTable(tuple(rows), tuple(horizons))


def moving_average(x, width=5) -> np.ndarray:
    """Centred moving average over complete windows only."""
    x = np.asarray(x, dtype=float)
    if x.size < width:
        raise DomainError(f"need at least {width} points to smooth")
    return np.convolve(x, np.ones(width) / width, mode="valid")
