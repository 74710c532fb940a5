"""Exception hierarchy shared by every module.

The CLI maps ``ConfigurationError`` to exit code 1 and ``IntegrityError``
to exit code 2.
"""


class TDCError(Exception):
    pass


class ConfigurationError(TDCError, ValueError):
    pass


class DomainError(TDCError, ValueError):
    pass


class TimeRangeError(TDCError, OverflowError):
    """Arithmetic left the representable femtosecond range."""


class RangeExceededError(TDCError, ValueError):
    """Delay beyond one period with the coarse counter disabled."""


class UsageError(TDCError, ValueError):
    pass


class BudgetExceededError(ConfigurationError):
    def __init__(self, requested: int, budget: int):
        super().__init__(f"requested {requested} taps exceeds tap budget {budget}")
        self.requested = requested
        self.budget = budget


class NotResolvableError(TDCError):
    def __init__(self, max_step: int):
        super().__init__(f"no step up to {max_step} fs changes the output")
        self.max_step = max_step


class IntegrityError(TDCError):
    pass


class UnsupportedVersionError(IntegrityError):
    pass


class NeedMoreData(TDCError):
    """Raised by the frame decoder when the buffer ends mid-frame."""
