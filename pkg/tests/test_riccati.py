import math

import mpmath as mp
import numpy as np
import pytest

from mtsmv import DomainError, MarketModel, MultiplierSet, ProblemSpec, schedule, solve_chain, verify_against_ode
from mtsmv.riccati_chain import ratio
from mtsmv.parameter_solver import solve_multipliers


def expm_oracle(spec, mult, times_by_segment, dps=30):
    """P_i, g_i by high-precision matrix exponentials of the linear system, jumps applied by hand."""
    mp.mp.dps = dps
    m = spec.market
    rho = [mp.mpf(l) / mp.mpf(u) for l, u in zip(mult.lam, mult.mu)] + [mp.mpf(0)]
    cps = spec.checkpoints
    out = {}
    p_next = g_next = mp.mpf(0)
    for i in range(spec.n_checkpoints, 0, -1):
        y_end = mp.matrix([mp.mpf(mult.mu[i - 1]) + p_next, g_next + p_next * (rho[i - 1] - rho[i])])

        def state(t):
            # walk backward from t_i through coefficient pieces
            y, right = y_end, mp.mpf(cps[i])
            knots = sorted({float(k) for k in m.knots if t < k < cps[i]}, reverse=True) + [t]
            for left in knots:
                j = m.segment_index(0.5 * (float(left) + float(right)))
                r, b = mp.mpf(float(m.rates[j])), mp.mpf(float(m.betas[j]))
                a = mp.matrix([[b - 2 * r, 0], [-rho[i - 1] * r, b - r]])
                y = mp.expm(-a * (right - mp.mpf(left))) * y
                right = mp.mpf(left)
            return y

        out[i] = [(t, state(t)) for t in times_by_segment(cps[i - 1], cps[i])]
        y0 = state(cps[i - 1])
        p_next, g_next = y0[0], y0[1]
    return out


def _check(spec, mult, tol):
    chain = solve_chain(spec, mult)
    oracle = expm_oracle(spec, mult, lambda a, b: list(np.linspace(a, b, 7)))
    for i, rows in oracle.items():
        for t, y in rows:
            assert float(chain.P(i, t)) == pytest.approx(float(y[0]), rel=tol)
            assert float(chain.g(i, t)) == pytest.approx(float(y[1]), rel=tol, abs=tol)


def test_chain_matches_expm_oracle_paper(paper_spec):
    mult, _, _ = solve_multipliers(paper_spec)
    _check(paper_spec, mult, 1e-13)


def test_chain_matches_expm_oracle_piecewise():
    market = MarketModel.piecewise(
        3.0,
        schedule((0.0, 0.03), (0.7, 0.05), (2.2, 0.02)),
        schedule((0.0, [0.09, 0.11]), (1.5, [0.12, 0.08])),
        [[0.2, 0.0], [0.06, 0.25]],
    )
    spec = ProblemSpec(market, (0.0, 1.0, 2.0, 3.0), 1.0, (1.1, 1.2, 1.3))
    mult = MultiplierSet((2.0, 1.5, 0.7), (3.0, 2.5, 1.1))
    _check(spec, mult, 1e-12)


def test_jump_conditions(paper_spec):
    mult = MultiplierSet((2.0, 1.0), (2.4, 1.3))
    chain = solve_chain(paper_spec, mult)
    rho = mult.rho
    assert float(chain.P(2, 2.0)) == pytest.approx(1.0)
    assert float(chain.g(2, 2.0)) == pytest.approx(0.0, abs=1e-15)
    p2, g2 = float(chain.P(2, 1.0)), float(chain.g(2, 1.0))
    assert float(chain.P(1, 1.0)) == pytest.approx(2.0 + p2, rel=1e-15)
    assert float(chain.g(1, 1.0)) == pytest.approx(g2 + p2 * (rho[0] - rho[1]), rel=1e-14)


def test_ratio_closed_form(paper_spec):
    mult, chain, _ = solve_multipliers(paper_spec)
    for i, (a, b) in enumerate([(0.0, 1.0), (1.0, 2.0)], start=1):
        for t in np.linspace(a, b, 5):
            assert float(ratio(chain, i, t)) == pytest.approx(float(chain.g(i, t) / chain.P(i, t)), rel=1e-13)


def test_outside_segment_raises(paper_spec):
    mult, chain, _ = solve_multipliers(paper_spec)
    with pytest.raises(DomainError):
        chain.P(1, 1.5)
    with pytest.raises(DomainError):
        chain.segment(3)


def test_mu_must_be_positive():
    with pytest.raises(DomainError):
        MultiplierSet((1.0, 0.0), (1.0, 1.0))


def test_rk4_cross_check_and_order(paper_spec):
    mult, chain, _ = solve_multipliers(paper_spec)
    fine = verify_against_ode(chain, paper_spec, mult, 1e-4)
    assert fine.max_deviation < 1e-10
    e1 = verify_against_ode(chain, paper_spec, mult, 0.25).max_deviation
    e2 = verify_against_ode(chain, paper_spec, mult, 0.125).max_deviation
    assert 12 <= e1 / e2 <= 20


def test_multiplier_dict_roundtrip():
    m = MultiplierSet((1.5, 0.5), (2.0, 0.75))
    assert MultiplierSet.from_dict(m.to_dict()) == m
    assert m.rho == (2.0 / 1.5, 1.5)
    assert m.scaled(2.0).rho == pytest.approx(m.rho)
