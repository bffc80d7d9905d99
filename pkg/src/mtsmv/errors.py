"""Exception hierarchy shared by every module of the package."""


class MtsmvError(Exception):
    """Base class for all package errors."""


class DomainError(MtsmvError, ValueError):
    """A time, interval or argument lies outside its admissible range."""


class AssumptionViolation(MtsmvError, ValueError):
    """Market coefficients violate the standing positivity/covariance assumptions."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfeasibleTargetsError(MtsmvError, ValueError):
    """Mean targets cannot be met with positive variance weights.

    Attributes
    ----------
    index : int
        1-based checkpoint index at which the recursion failed.
    inequality : str
        Which condition failed: ``"growth"``, ``"convexity"`` or ``"ass-1"``.
    report : FeasibilityReport or None
    """

    def __init__(self, message, index=None, inequality=None, report=None):
        super().__init__(message)
        self.index = index
        self.inequality = inequality
        self.report = report


class SimulationError(MtsmvError, RuntimeError):
    """Monte Carlo run produced too many non-finite paths."""


class ConfigError(MtsmvError, ValueError):
    """Experiment file is unreadable or names an invalid field.

    ``field`` is a dotted path such as ``problem.market.rate``; ``line`` is
    set for JSON syntax errors.
    """

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
