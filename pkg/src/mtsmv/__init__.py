"""Continuous-time mean-variance investment with intermediate mean targets.

Typical use::

    from mtsmv import MarketModel, ProblemSpec, solve_multipliers, propagate_moments

    market = MarketModel.constant(2.0, 0.04, [0.12], [[0.2]])
    spec = ProblemSpec(market, (0, 1, 2), 1.0, (1.0877, 1.2214))
    mult, chain, _ = solve_multipliers(spec)
    report = propagate_moments(chain, mult, spec)
"""

from .errors import (
    AssumptionViolation,
    ConfigError,
    DomainError,
    InfeasibleTargetsError,
    MtsmvError,
    SimulationError,
)
from .market_model import (
    MarketModel,
    ProblemSpec,
    ValidationReport,
    beta,
    excess_return,
    integral_beta,
    integral_rate,
    schedule,
    validate_assumptions,
)
from .riccati_chain import MultiplierSet, RiccatiChain, ratio, solve_chain, verify_against_ode
from .parameter_solver import FeasibilityReport, check_feasibility, solve_multipliers, solve_n2_closed_form
from .strategy import (
    Comparison,
    LinearFeedbackPolicy,
    PolicyReport,
    classical_baseline,
    classical_policy,
    compare_models,
    frontier_recursion,
    optimal_control,
    optimal_policy,
    propagate_moments,
)
from .simulator import (
    SimulationConfig,
    SimulationReport,
    j4_difference,
    j4_estimate,
    max_drawdown,
    mdd_sweep,
    simulate,
    simulate_many,
)

__version__ = "0.1.0"
