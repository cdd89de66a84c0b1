"""Exception hierarchy shared by all modules."""


class HCCError(Exception):
    pass


class NonFiniteValue(HCCError, ArithmeticError):
    pass


class ZeroDimInput(HCCError, ValueError):
    pass


class OutOfRange(HCCError, ValueError):
    pass


class DegeneratePath(HCCError, ValueError):
    pass


class DimensionMismatch(HCCError, ValueError):
    pass


class InvalidDistribution(HCCError, ValueError):
    pass


class UnknownDivergence(HCCError, KeyError):
    pass


class DomainError(HCCError, ValueError):
    pass


class IntegrationError(HCCError):
    """Raised when an integrator stops early; carries the partial trajectory."""

    def __init__(self, message, time=None, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


class DomainGuardViolation(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


class RangeExit(IntegrationError, OutOfRange):
    """An output-space trajectory reached the boundary of an attainable range."""


class QuadratureFailure(HCCError, ArithmeticError):
    pass


class NonPositiveR(HCCError, ValueError):
    pass


class NoConvergence(HCCError, ArithmeticError):
    pass


class SingularJacobian(HCCError, ArithmeticError):
    pass


class EmptySolutionSet(HCCError, ValueError):
    pass


class ZeroDenominator(HCCError, ZeroDivisionError):
    pass


class InvalidMetric(HCCError, ValueError):
    pass


class Infeasible(HCCError):
    pass


class EmptyFeasibleSet(HCCError, ValueError):
    pass


class ProjectionFailure(HCCError, ArithmeticError):
    pass


class ConfigError(HCCError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
