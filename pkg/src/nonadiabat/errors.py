"""Exception types raised on malformed input or unusable numerical state.

Physics-check failures are never raised; they are returned in reports.
"""


class NonadiabatError(Exception):
    """Base class for all errors raised by this package."""


class NotHermitian(NonadiabatError, ValueError):
    pass


class DimensionMismatch(NonadiabatError, ValueError):
    pass


class SingularOperand(NonadiabatError, ValueError):
    pass


class NotNormalized(NonadiabatError, ValueError):
    pass


class NotPositive(NonadiabatError, ValueError):
    pass


class OutOfHorizon(NonadiabatError, ValueError):
    pass


class DegenerateSteadyState(NonadiabatError, ArithmeticError):
    pass


class NotPositiveDefinite(NonadiabatError, ArithmeticError):
    pass


class IntegratorDrift(NonadiabatError, ArithmeticError):
    pass


class NotPrivileged(NonadiabatError, ValueError):
    pass


class ZeroOperator(NonadiabatError, ValueError):
    pass


class UnpairedJump(NonadiabatError, ValueError):
    pass


class MissingWeights(NonadiabatError, ValueError):
    pass


class SingularState(NonadiabatError, ValueError):
    pass


class StepTooLarge(NonadiabatError, ValueError):
    pass


class InsufficientSamples(NonadiabatError, ValueError):
    pass


class DegenerateFixedPoint(NonadiabatError, ArithmeticError):
    pass


class ParseError(NonadiabatError, ValueError):
    """Scenario file could not be read; message carries line or field."""


class SchemaVersionMismatch(ParseError):
    pass


class UnresolvedReference(ParseError):
    pass
