"""Lagrange multipliers that pin the checkpoint means to their targets.

The multipliers are found by a backward recursion: step ``i`` needs the
targets ``L_i``, ``L_{i-1}`` and the already solved values ``P_{i+1}(t_i)``,
``g_{i+1}(t_i)``, ``rho_{i+1}`` of the later segment.  Feasibility of the
second (convexity) inequality can therefore only be checked while recursing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import InfeasibleTargetsError
from .market_model import ProblemSpec
from .riccati_chain import MultiplierSet, RiccatiChain, solve_segment, start_values

DENOMINATOR_GUARD = 1e-12


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-checkpoint flags from a dry run of the recursion (index ``i-1`` holds checkpoint ``i``).

    ``growth_ok[i]`` is ``L_i - L_{i-1} e^{int r} > 0`` (with ``L_0 = y``);
    ``convexity_ok[i]`` is the second feasibility inequality, vacuous for
    the last checkpoint; ``mu_positive[i]`` is the sign of the weight the
    recursion produced.  A flag is False when it could not be evaluated
    because a later step already failed.
    """

    growth_ok: tuple[bool, ...]
    convexity_ok: tuple[bool, ...]
    mu_positive: tuple[bool, ...]
    messages: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return all(self.growth_ok) and all(self.convexity_ok) and all(self.mu_positive)

    def first_failure(self):
        """``(index, inequality)`` of the failure met first by the backward recursion."""
        for i in range(len(self.growth_ok), 0, -1):
            if not self.growth_ok[i - 1]:
                return i, "growth"
            if not self.convexity_ok[i - 1]:
                return i, "convexity"
            if not self.mu_positive[i - 1]:
                return i, "mu>0"
        return None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "growth_ok": list(self.growth_ok),
            "convexity_ok": list(self.convexity_ok),
            "mu_positive": list(self.mu_positive),
            "messages": list(self.messages),
        }


class MultiplierSolution(NamedTuple):
    multipliers: MultiplierSet
    chain: RiccatiChain
    feasibility: FeasibilityReport


def _recursion(spec: ProblemSpec):
    n = spec.n_checkpoints
    levels = (spec.initial_wealth,) + spec.targets
    growth = [False] * n
    convex = [False] * n
    positive = [False] * n
    messages = []
    mus, lams, segments = [0.0] * n, [0.0] * n, []
    p_next = g_next = rho_next = 0.0
    alive = True
    for i in range(n, 0, -1):
        big_r, big_b = spec.segment_integrals[i - 1]
        gap = levels[i] - levels[i - 1] * math.exp(big_r)
        degenerate = abs(gap) < DENOMINATOR_GUARD * max(1.0, abs(levels[i]))
        growth[i - 1] = gap > 0 and not degenerate
        if not growth[i - 1]:
            messages.append(
                f"checkpoint {i}: growth inequality L_{i} - L_{i - 1} e^(int r) > 0 fails (gap = {gap:.6g})"
            )
        if not alive:
            continue
        drift_gap = levels[i] - levels[i - 1] * math.exp(big_r - big_b)
        carry = 1.0 + p_next * rho_next - g_next
        convex[i - 1] = carry * -math.expm1(-big_b) > drift_gap * p_next
        if not convex[i - 1]:
            messages.append(f"checkpoint {i}: convexity inequality fails")
        if degenerate:
            alive = False
            continue
        mu = (carry * math.expm1(big_b) - drift_gap * p_next * math.exp(big_b)) / gap
        positive[i - 1] = mu > 0
        if not positive[i - 1]:
            messages.append(f"checkpoint {i}: recursion gives mu_{i} = {mu:.6g} <= 0")
            alive = False
            continue
        den = p_next + mu * math.exp(-big_b)
        lam = (p_next + mu) / den + mu * (
            (p_next * rho_next - g_next) / den * -math.expm1(-big_b)
            + (p_next + mu) / den * levels[i - 1] * math.exp(big_r - big_b)
        )
        mus[i - 1], lams[i - 1] = mu, lam
        seg = solve_segment(spec, i, mu, lam / mu, p_next, g_next, rho_next)
        segments.append(seg)
        p_next, g_next = start_values(spec, seg)
        rho_next = seg.rho
    report = FeasibilityReport(tuple(growth), tuple(convex), tuple(positive), tuple(messages))
    return mus, lams, segments[::-1], report


def check_feasibility(spec: ProblemSpec) -> FeasibilityReport:
    """Dry-run the recursion and report both feasibility inequalities; never raises."""
    return _recursion(spec)[3]


def _raise_for(report: FeasibilityReport):
    index, inequality = report.first_failure()
    detail = {
        "growth": "target does not exceed riskless growth of the previous target",
        "convexity": "second feasibility inequality fails (variance weight would be non-positive)",
        "mu>0": "variance weight is non-positive",
    }[inequality]
    raise InfeasibleTargetsError(
        f"infeasible targets at checkpoint {index} ({inequality}): {detail}",
        index=index,
        inequality=inequality,
        report=report,
    )


def solve_multipliers(spec: ProblemSpec) -> MultiplierSolution:
    """Solve ``(mu, lambda*)`` so the optimal feedback strategy hits every mean target.

    Returns the multipliers, the matching Riccati chain and the feasibility
    report.  Raises :class:`InfeasibleTargetsError` naming the first failing
    checkpoint and inequality.
    """
    mus, lams, segments, report = _recursion(spec)
    if not report.ok:
        _raise_for(report)
    mult = MultiplierSet(tuple(mus), tuple(lams))
    return MultiplierSolution(mult, RiccatiChain(spec, mult, segments), report)


def solve_n2_closed_form(spec: ProblemSpec) -> MultiplierSet:
    """Explicit two-checkpoint multipliers written out in segment integrals.

    With unit segments and constant coefficients every ``exp(int r)`` and
    ``exp(int beta)`` below collapses to ``e^r`` and ``e^beta``.
    """
    if spec.n_checkpoints != 2:
        raise ValueError("closed form needs exactly two checkpoints")
    y = spec.initial_wealth
    l1, l2 = spec.targets
    (r1, b1), (r2, b2) = spec.segment_integrals
    er1, eb1, er2, eb2 = math.exp(r1), math.exp(b1), math.exp(r2), math.exp(b2)

    gap2 = l2 - l1 * er2
    gap1 = l1 - y * er1
    for i, gap, level in ((2, gap2, l2), (1, gap1, l1)):
        if not gap > DENOMINATOR_GUARD * max(1.0, abs(level)):
            raise InfeasibleTargetsError(
                f"infeasible targets at checkpoint {i} (growth)", index=i, inequality="growth"
            )
    mu2 = (eb2 - 1.0) / gap2
    lam2 = (l2 * eb2 - l1 * er2) / gap2
    mu1 = ((eb1 - 1.0) * (eb2 + lam2 * er2) - (l1 * eb1 - y * er1) * er2 * er2 * mu2) / (gap1 * eb2)
    if not mu1 > 0:
        raise InfeasibleTargetsError(
            "infeasible targets at checkpoint 1 (convexity)", index=1, inequality="convexity"
        )
    p2 = mu2 * er2 * er2 / eb2
    den = p2 + mu1 / eb1
    lam1 = (p2 + mu1) / den + mu1 * (
        lam2 * er2 / eb2 * (1.0 - 1.0 / eb1) + (p2 + mu1) * y * er1 / eb1
    ) / den
    return MultiplierSet((mu1, mu2), (lam1, lam2))
