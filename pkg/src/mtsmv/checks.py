"""Self-checks shared by the ``verify`` command and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTargetsError
from .market_model import MarketModel, ProblemSpec
from .parameter_solver import solve_multipliers, solve_n2_closed_form
from .riccati_chain import verify_against_ode
from .strategy import classical_frontier, frontier_recursion, propagate_moments


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.ok else "FAIL"
        return f"{flag}  {self.name:<34s} value={self.value:.3e}  tol={self.tolerance:.1e}  {self.detail}"


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def random_instance(rng: np.random.Generator, n_checkpoints: int, max_tries: int = 200) -> ProblemSpec:
    """Random feasible problem with constant coefficients.

    The covariance is kept well conditioned; targets grow by a random excess
    over riskless growth and are redrawn until the recursion accepts them.
    """
    n = int(rng.integers(1, 4))
    r = float(rng.uniform(0.01, 0.08))
    drift = r + rng.uniform(0.02, 0.12, size=n)
    a = rng.normal(size=(n, n)) * 0.05
    vol = np.diag(rng.uniform(0.15, 0.35, size=n)) + a
    gaps = rng.uniform(0.2, 1.0, size=n_checkpoints)
    cps = np.concatenate([[0.0], np.cumsum(gaps)])
    market = MarketModel.constant(float(cps[-1]), r, drift, vol)
    y = float(rng.uniform(0.5, 2.0))
    for _ in range(max_tries):
        levels, prev = [], y
        for g in gaps:
            prev = prev * math.exp(r * g) * (1.0 + rng.uniform(0.005, 0.1))
            levels.append(prev)
        spec = ProblemSpec(market, tuple(cps), y, tuple(levels))
        try:
            solve_multipliers(spec)
        except InfeasibleTargetsError:
            continue
        return spec
    raise RuntimeError("could not draw a feasible instance")


def ode_convergence_ratio(spec: ProblemSpec, coarse=0.25) -> float:
    mult, chain, _ = solve_multipliers(spec)
    e1 = verify_against_ode(chain, spec, mult, coarse).max_deviation
    e2 = verify_against_ode(chain, spec, mult, coarse / 2).max_deviation
    return e1 / e2


def invariant_suite(spec: ProblemSpec, n_random: int = 200, seed: int = 0) -> list[CheckResult]:
    out = []
    mult, chain, _ = solve_multipliers(spec)

    ode = verify_against_ode(chain, spec, mult, 1e-4)
    out.append(CheckResult("riccati vs RK4 (step 1e-4)", ode.max_deviation < 1e-10, ode.max_deviation, 1e-10))
    ratio = ode_convergence_ratio(spec)
    out.append(CheckResult("RK4 error ratio under halving", 12 <= ratio <= 20, ratio, 0.0, "expect [12, 20]"))

    rep = propagate_moments(chain, mult, spec)
    err = rel_err(rep.checkpoint_means, spec.targets)
    out.append(CheckResult("round trip: means hit targets", err < 1e-10, err, 1e-10))
    err = rel_err(rep.checkpoint_variances, frontier_recursion(spec))
    out.append(CheckResult("frontier recursion = propagation", err < 1e-10, err, 1e-10))

    single = spec.terminal_only()
    m1, c1, _ = solve_multipliers(single)
    v1 = propagate_moments(c1, m1, single).checkpoint_variances[0]
    err = rel_err(v1, classical_frontier(spec, spec.horizon, spec.targets[-1]))
    out.append(CheckResult("one checkpoint = classical frontier", err < 1e-12, err, 1e-12))

    if spec.n_checkpoints == 2:
        closed = solve_n2_closed_form(spec)
        err = max(rel_err(closed.mu, mult.mu), rel_err(closed.lam, mult.lam))
        out.append(CheckResult("closed form = recursion (N=2)", err < 1e-10, err, 1e-10))

    rng = np.random.default_rng(seed)
    worst_mean = worst_var = 0.0
    for _ in range(n_random):
        s = random_instance(rng, int(rng.integers(1, 6)))
        mu, ch, _ = solve_multipliers(s)
        r = propagate_moments(ch, mu, s)
        worst_mean = max(worst_mean, rel_err(r.checkpoint_means, s.targets))
        worst_var = max(worst_var, rel_err(r.checkpoint_variances, frontier_recursion(s)))
    out.append(CheckResult(f"round trip, {n_random} random", worst_mean < 1e-10, worst_mean, 1e-10))
    out.append(CheckResult(f"frontier, {n_random} random", worst_var < 1e-10, worst_var, 1e-10))
    return out
