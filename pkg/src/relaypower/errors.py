"""Exception types shared across the package."""


class RelayPowerError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RelayPowerError, ValueError):
    """An argument violates a documented precondition (sign, shape, PSD-ness)."""


class NumericalError(RelayPowerError, ArithmeticError):
    """A computation became singular or produced non-finite values."""


class ScenarioError(InvalidInputError):
    """A scenario could not be constructed (e.g. a sensor on a singular manifold)."""


class UnsupportedSizeError(InvalidInputError):
    """A brute-force routine was asked to handle a problem that is too large."""
