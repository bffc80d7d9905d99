import math

import numpy as np
import pytest

from mtsmv import (
    DomainError,
    LinearFeedbackPolicy,
    SimulationConfig,
    SimulationError,
    classical_baseline,
    j4_difference,
    j4_estimate,
    max_drawdown,
    mdd_sweep,
    propagate_moments,
    simulate,
    simulate_many,
    solve_multipliers,
)
from mtsmv.simulator import BLOCK_SIZE, block_generator, _noise_chunks, moving_average
from mtsmv.strategy import classical_policy

from conftest import BETA, R


@pytest.fixture(scope="module")
def optimal(paper_spec):
    mult, chain, _ = solve_multipliers(paper_spec)
    return mult, chain, LinearFeedbackPolicy.from_chain(chain)


# -- drawdown -------------------------------------------------------------


def brute_drawdown(x):
    return max(max(x[i] - x[j] for j in range(i, len(x))) for i in range(len(x)))


def test_drawdown_examples():
    assert max_drawdown([1.0, 1.1, 1.1, 1.3]) == 0.0
    assert max_drawdown([1.0, 1.2, 0.9, 1.1]) == pytest.approx(0.3)
    with pytest.raises(DomainError):
        max_drawdown([])


def test_drawdown_against_pairwise_oracle():
    rng = np.random.default_rng(5)
    paths = rng.normal(size=(200, 10)).cumsum(axis=1)
    got = max_drawdown(paths)
    assert got == pytest.approx([brute_drawdown(p) for p in paths], abs=1e-15)
    assert np.all(got >= 0)


def test_drawdown_horizon_and_refinement():
    rng = np.random.default_rng(6)
    t = np.linspace(0, 2, 201)
    x = 1 + rng.normal(scale=0.01, size=(50, t.size)).cumsum(axis=1)
    fine = max_drawdown(x, 2.0, t)
    coarse = max_drawdown(x[:, ::10], 2.0, t[::10])
    assert np.all(fine >= coarse)
    assert np.all(max_drawdown(x, 1.0, t) <= fine)


# -- configuration and noise -------------------------------------------------


def test_config_validation(paper_spec, optimal):
    with pytest.raises(DomainError):
        SimulationConfig(n_paths=0)
    with pytest.raises(DomainError):
        SimulationConfig(step=1e-3, record_step=1.5e-3)
    with pytest.raises(DomainError):
        simulate(optimal[2], paper_spec, SimulationConfig(n_paths=10, step=0.3, record_step=0.3))


def test_chunked_noise_equals_one_shot_draw():
    chunks = np.concatenate([z for _, z in _noise_chunks(9, 3, 600, 1)], axis=0)
    one = block_generator(9, 3).standard_normal((600, BLOCK_SIZE, 1))
    np.testing.assert_array_equal(chunks, one)
    other = block_generator(9, 4).standard_normal((5, BLOCK_SIZE, 1))
    assert not np.array_equal(one[:5], other)


def test_results_do_not_depend_on_path_count_or_workers(paper_spec, optimal):
    pol = optimal[2]
    cfg = SimulationConfig(n_paths=2500, step=0.01, seed=1, record_step=0.05)
    a = simulate(pol, paper_spec, cfg)
    b = simulate(pol, paper_spec, SimulationConfig(n_paths=1200, step=0.01, seed=1, record_step=0.05))
    np.testing.assert_array_equal(a.samples[:1200], b.samples)
    c = simulate(pol, paper_spec, SimulationConfig(n_paths=2500, step=0.01, seed=1, record_step=0.05, workers=2))
    np.testing.assert_array_equal(a.samples, c.samples)
    np.testing.assert_array_equal(a.mdd_samples, c.mdd_samples)
    again = simulate(pol, paper_spec, cfg)
    assert a.to_dict() == again.to_dict()


class _Opaque:
    """Same policy seen only through its allocation callable."""

    def __init__(self, pol):
        self.pol = pol
        self.name = "opaque"

    def allocation(self, t, y, segment):
        return self.pol.allocation(t, y, segment)


def test_generic_path_matches_linear_fast_path(paper_spec, optimal):
    cfg = SimulationConfig(n_paths=300, step=0.01, seed=2, record_step=0.05)
    fast = simulate(optimal[2], paper_spec, cfg)
    slow = simulate(_Opaque(optimal[2]), paper_spec, cfg)
    np.testing.assert_allclose(slow.samples, fast.samples, rtol=1e-12)
    np.testing.assert_allclose(slow.mdd_samples, fast.mdd_samples, rtol=1e-10, atol=1e-14)


class _Riskless:
    name = "riskless"

    def allocation(self, t, y, segment):
        return np.zeros((np.size(y), 1))


def test_zero_allocation_grows_at_the_riskless_rate(paper_spec):
    cfg = SimulationConfig(n_paths=64, step=1e-3, seed=0)
    rep = simulate(_Riskless(), paper_spec, cfg)
    assert np.all(rep.checkpoint_variance < 1e-28)
    assert np.all(rep.samples == rep.samples[0])
    exact = np.exp(R * np.array([1.0, 2.0]))
    euler = (1 + R * 1e-3) ** np.array([1000, 2000])
    np.testing.assert_allclose(rep.samples[0], euler, rtol=1e-12)
    # Euler bias of the riskless factor is about r^2 t dt / 2
    np.testing.assert_allclose(rep.samples[0], exact, rtol=R**2 * 2 * 1e-3)
    assert np.all(rep.mdd_mean == 0.0)


class _Explosive:
    name = "explosive"

    def allocation(self, t, y, segment):
        return np.full((np.size(y), 1), 1e300) * np.reshape(y, (-1, 1))


def test_non_finite_paths_fail_the_run(paper_spec):
    with pytest.raises(SimulationError):
        simulate(_Explosive(), paper_spec, SimulationConfig(n_paths=50, step=0.1, record_step=0.1))


# -- statistics ------------------------------------------------------------------


def test_moments_agree_with_analytic(paper_spec, optimal):
    mult, chain, pol = optimal
    rep = simulate(pol, paper_spec, SimulationConfig(n_paths=20_000, step=2e-3, seed=3))
    analytic = propagate_moments(chain, mult, paper_spec)
    z_mean = (rep.checkpoint_mean - np.array(paper_spec.targets)) / rep.checkpoint_mean_se
    z_var = (rep.checkpoint_variance - np.array(analytic.checkpoint_variances)) / rep.checkpoint_variance_se
    assert np.all(np.abs(z_mean) < 4) and np.all(np.abs(z_var) < 4)
    assert np.all(rep.checkpoint_variance >= 0)
    assert np.all(np.diff(rep.mdd_mean) >= 0)
    assert np.all(rep.mdd_samples[:, 0] <= rep.mdd_samples[:, 1])
    fan = rep.quantile_fan
    assert fan.shape == (len(rep.record_times), 5)
    assert np.all(np.diff(fan[1:], axis=1) > 0)


def test_classical_terminal_variance(paper_spec):
    pol = classical_policy(paper_spec)
    rep = simulate(pol, paper_spec, SimulationConfig(n_paths=20_000, step=2e-3, seed=4))
    l2 = paper_spec.targets[1]
    v = (l2 - math.exp(2 * R)) ** 2 / math.expm1(2 * BETA)
    assert abs(rep.checkpoint_variance[1] - v) < 4 * rep.checkpoint_variance_se[1]
    base = classical_baseline(paper_spec)
    t1 = int(np.searchsorted(base.times, 1.0))
    assert abs(rep.checkpoint_mean[0] - base.mean[t1]) < 4 * rep.checkpoint_mean_se[0]


def test_common_noise_pairs_policies(paper_spec, optimal):
    mult, _, pol = optimal
    worse = pol.perturbed(offset_scale=1.1, name="offset+10%")
    a, b = simulate_many([pol, worse], paper_spec, SimulationConfig(n_paths=5000, step=0.01, seed=5))
    d = j4_difference(b, a, mult)
    assert d.value > 2 * d.se
    ea, eb = j4_estimate(a, mult), j4_estimate(b, mult)
    assert eb.value - ea.value == pytest.approx(d.value, rel=1e-9)
    assert d.se < math.hypot(ea.se, eb.se)


def test_sweep_skips_infeasible_theta(paper_spec):
    table = mdd_sweep(paper_spec, [0.9, 1.5, 2.0, 3.2], SimulationConfig(n_paths=500, step=0.01, seed=6))
    assert [r.feasible for r in table.rows] == [False, True, True, False]
    assert "growth" in table.rows[0].reason and "convexity" in table.rows[3].reason
    theta, md1, se1 = table.column(0)
    _, md2, _ = table.column(1)
    assert list(theta) == [1.5, 2.0]
    assert np.all(md1 <= md2) and np.all(se1 > 0)


def test_moving_average():
    np.testing.assert_allclose(moving_average([1, 2, 3, 4, 5, 6]), [3, 4])
    with pytest.raises(DomainError):
        moving_average([1, 2])
