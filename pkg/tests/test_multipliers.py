import math

import mpmath as mp
import numpy as np
import pytest

from mtsmv import InfeasibleTargetsError, MarketModel, ProblemSpec, check_feasibility, solve_multipliers
from mtsmv import propagate_moments, schedule, solve_n2_closed_form
from mtsmv.checks import random_instance, rel_err
from mtsmv.strategy import _checkpoint_moments

from conftest import B, R, SIGMA


def paper_oracle(l1, l2, dps=40):
    """Two-checkpoint multipliers for unit segments, evaluated in high precision."""
    mp.mp.dps = dps
    r, beta = mp.mpf(R), ((mp.mpf(B) - mp.mpf(R)) / mp.mpf(SIGMA)) ** 2
    l1, l2 = mp.mpf(l1), mp.mpf(l2)
    e = mp.exp
    mu2 = (e(beta) - 1) / (l2 - l1 * e(r))
    lam2 = (l2 * e(beta) - l1 * e(r)) / (l2 - l1 * e(r))
    mu1 = ((e(beta) - 1) * (e(beta) + lam2 * e(r)) - (l1 * e(beta) - e(r)) * e(2 * r) * mu2) / ((l1 - e(r)) * e(beta))
    den = mu2 * e(2 * r) + mu1
    lam1 = mu1 * (lam2 * (e(r) - e(r - beta)) / den + (mu2 * e(3 * r - beta) + mu1 * e(r)) / den) + (
        mu2 * e(2 * r) + mu1 * e(beta)
    ) / den
    return [float(x) for x in (mu1, mu2, lam1, lam2)]


def test_paper_multipliers_match_oracle(paper_spec):
    mu1, mu2, lam1, lam2 = paper_oracle(*paper_spec.targets)
    mult, _, feas = solve_multipliers(paper_spec)
    assert feas.ok
    assert rel_err(mult.mu, (mu1, mu2)) < 1e-10
    assert rel_err(mult.lam, (lam1, lam2)) < 1e-10
    assert mult.mu[1] == pytest.approx(1.9411, abs=1e-4)
    assert mult.lam[1] == pytest.approx(3.3709, abs=1e-4)


@pytest.mark.parametrize("l1_exp, l2_exp", [(1.5, 5.0), (2.1, 5.0), (2.5, 4.5), (1.2, 6.0)])
def test_closed_form_agrees_with_recursion(paper_market, l1_exp, l2_exp):
    spec = ProblemSpec(paper_market, (0, 1, 2), 1.0, (math.exp(l1_exp * R), math.exp(l2_exp * R)))
    mult, _, _ = solve_multipliers(spec)
    closed = solve_n2_closed_form(spec)
    assert rel_err(closed.mu, mult.mu) < 1e-12
    assert rel_err(closed.lam, mult.lam) < 1e-12
    assert rel_err(closed.lam, paper_oracle(*spec.targets)[2:]) < 1e-10


def test_closed_form_general_segments():
    market = MarketModel.piecewise(3.0, schedule((0.0, 0.03), (0.8, 0.05)), [0.11], [[0.22]])
    spec = ProblemSpec(market, (0.0, 1.3, 3.0), 1.2, (1.3, 1.6))
    mult, _, _ = solve_multipliers(spec)
    closed = solve_n2_closed_form(spec)
    assert rel_err(closed.mu, mult.mu) < 1e-12
    assert rel_err(closed.lam, mult.lam) < 1e-12


def test_single_checkpoint_formula(paper_market):
    spec = ProblemSpec(paper_market, (0.0, 2.0), 1.0, (math.exp(0.2),))
    mult, _, _ = solve_multipliers(spec)
    e2b, e2r = math.exp(2 * 0.16), math.exp(2 * R)
    l2 = math.exp(0.2)
    assert mult.mu[0] == pytest.approx((e2b - 1) / (l2 - e2r), rel=1e-13)
    assert mult.lam[0] == pytest.approx((l2 * e2b - e2r) / (l2 - e2r), rel=1e-13)


def _j4(spec, mult, offsets):
    means, seconds, _ = _checkpoint_moments(spec, offsets)
    return sum(0.5 * mu * (s - 2 * rho * m + rho * rho) for mu, rho, m, s in zip(mult.mu, mult.rho, means[1:], seconds[1:]))


def test_offsets_are_stationary_for_the_penalised_cost():
    # brute force over the linear-feedback family: the solved offsets minimise J4
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 4):
        spec = random_instance(rng, n)
        mult, chain, _ = solve_multipliers(spec)
        k = np.array(chain.offsets)
        base = _j4(spec, mult, k)
        for j in range(n):
            for h in (1e-3, -1e-3, 0.05, -0.05):
                kk = k.copy()
                kk[j] += h
                assert _j4(spec, mult, kk) > base
            e = np.zeros(n)
            e[j] = 1e-5
            grad = (_j4(spec, mult, k + e) - _j4(spec, mult, k - e)) / 2e-5
            assert abs(grad) < 1e-6 * max(1.0, abs(base))


def test_round_trip_random():
    rng = np.random.default_rng(11)
    for _ in range(100):
        spec = random_instance(rng, int(rng.integers(1, 6)))
        mult, chain, _ = solve_multipliers(spec)
        rep = propagate_moments(chain, mult, spec)
        assert rel_err(rep.checkpoint_means, spec.targets) < 1e-10
        assert all(m > 0 for m in mult.mu)


def test_decreasing_targets_name_growth(paper_market):
    spec = ProblemSpec(paper_market, (0, 1, 2), 1.0, (1.2, 1.1))
    with pytest.raises(InfeasibleTargetsError) as info:
        solve_multipliers(spec)
    assert info.value.index == 2 and info.value.inequality == "growth"
    rep = check_feasibility(spec)
    assert rep.growth_ok == (True, False)
    assert rep.first_failure() == (2, "growth")


def test_first_target_below_riskless(paper_market):
    spec = ProblemSpec(paper_market, (0, 1, 2), 1.0, (1.0, 1.3))
    with pytest.raises(InfeasibleTargetsError) as info:
        solve_multipliers(spec)
    assert (info.value.index, info.value.inequality) == (1, "growth")


def test_convexity_failure(paper_market):
    # L1 above the level at which the first variance weight changes sign
    spec = ProblemSpec(paper_market, (0, 1, 2), 1.0, (1.14, math.exp(0.2)))
    rep = check_feasibility(spec)
    assert rep.growth_ok == (True, True)
    assert rep.convexity_ok[0] is False
    with pytest.raises(InfeasibleTargetsError) as info:
        solve_multipliers(spec)
    assert (info.value.index, info.value.inequality) == (1, "convexity")


def test_check_feasibility_never_raises(paper_market):
    for targets in [(0.5, 0.4), (1.05, 1.0), (1.3, 1.31)]:
        rep = check_feasibility(ProblemSpec(paper_market, (0, 1, 2), 1.0, targets))
        assert not rep.ok
        assert rep.messages
