"""Exception types shared across the package."""


class BregmanEmError(Exception):
    """Base class for all package errors."""


class ArgumentError(BregmanEmError, ValueError):
    """An argument is outside its documented range."""


class DomainError(BregmanEmError):
    """A point lies outside the open domain of a potential, or a
    mixture coordinate lies outside the realizable range (detected
    operationally through solver divergence)."""


class ConvergenceError(BregmanEmError):
    """An iterative solve stalled or hit its iteration cap."""


class SingularMatrixError(BregmanEmError):
    """A matrix that must be invertible is numerically singular."""


class RankError(BregmanEmError):
    """A direction or feature matrix fails its rank requirement."""


class SupportError(BregmanEmError):
    """A probability vector has zero or negative entries where strict
    positivity is required."""


class InfeasibleError(BregmanEmError):
    """No point satisfies the requested constraints."""


class NonMembershipError(BregmanEmError):
    """A point claimed to lie in a family fails its membership test."""


class BracketError(BregmanEmError):
    """Bisection endpoints do not bracket a derivative sign change."""


class UnboundedError(BregmanEmError):
    """Bracket expansion found no sign change within the doubling cap."""


class OracleContractError(BregmanEmError):
    """An approximate m-step oracle violated its declared tolerances."""


class NotPositiveDefiniteError(BregmanEmError):
    """A matrix logarithm was requested for a non positive definite
    matrix."""


class DimensionError(BregmanEmError):
    """Operator dimensions are inconsistent with the declared tensor
    factorization."""


class FormatError(BregmanEmError):
    """A trace or summary file does not parse as expected."""


class SchemaError(BregmanEmError):
    """A problem file violates the input schema.

    The offending field path is stored in ``field``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
