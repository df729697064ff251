"""Exception hierarchy shared by every DMUSO module."""


class DmusoError(Exception):
    """Base class for domain errors raised by the simulator."""


# configuration
class ConfigParseError(DmusoError):
    """Scenario file is structurally unreadable (missing section/key, bad value)."""


class ScenarioError(DmusoError):
    """One or more scenario invariants are violated.

    ``violations`` holds every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


# channel
class ZeroChannel(DmusoError):
    pass


class NonPositiveBandwidth(DmusoError):
    pass


class OutOfCell(DmusoError):
    pass


# learning
class UtilityOverflow(DmusoError):
    """beta * r * s exceeded the exponent cap; the utility model diverged."""


class ZeroCellThroughput(DmusoError):
    pass


class NonConvergence(DmusoError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class CalibrationFailed(DmusoError):
    pass


class NegativeDelta(DmusoError):
    pass


# bandwidth optimisation
class DegenerateSinr(DmusoError):
    pass


class NotDescent(DmusoError):
    pass


class StepNotFound(DmusoError):
    pass


class Infeasible(DmusoError):
    pass


class MaxIters(DmusoError):
    pass


# scheduler / harness
class Rejected(DmusoError):
    """Admission of a new category was refused; ``demand`` is the violating sum."""

    def __init__(self, message, demand=float("nan")):
        super().__init__(message)
        self.demand = demand


class EmptyMetrics(DmusoError):
    pass


class InvariantViolation(DmusoError):
    """A conservation or ledger invariant failed between scheduler steps."""
