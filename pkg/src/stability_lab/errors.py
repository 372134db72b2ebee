"""Exception types shared across the package."""


class StabilityLabError(Exception):
    """Base class for all errors raised by stability_lab."""


class BudgetExhaustedError(StabilityLabError):
    """An algorithm tried to read more random bits than it declared."""


class EnumerationTooLargeError(StabilityLabError):
    """Exhaustive enumeration was requested beyond the configured cap."""


class UnknownDistributionError(StabilityLabError, KeyError):
    """An oracle algorithm was run on a distribution it has no law for."""


class PreconditionError(StabilityLabError):
    """A transform's measured precondition does not hold.

    The measured value is kept on the exception so reports can show it.
    """

    def __init__(self, message, measured=None):
        super().__init__(message)
        self.measured = measured


class CapExceededError(StabilityLabError):
    """A universe, class or sample was too large for the configured cap."""


class ConfigError(StabilityLabError):
    """An experiment configuration failed validation."""
