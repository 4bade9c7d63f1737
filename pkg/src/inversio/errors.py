"""Exception types shared across the package."""


class InversioError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(InversioError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(InversioError, ValueError):
    """A state lies outside the family's state space."""


class UnsupportedError(InversioError):
    """The operation is not available for this family or parameter set."""


class NumericalDomainError(InversioError, ArithmeticError):
    """A numerical evaluation left its valid domain (e.g. nonpositive speed)."""


class PastLifetimeError(InversioError):
    """A time query lies beyond the additive functional's final value."""


class TailError(InversioError, ArithmeticError):
    """The tail of a potential-kernel quadrature fails to converge."""
