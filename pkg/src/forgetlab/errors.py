"""Exception types shared across forgetlab."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(ValueError):
    """A configuration value is missing, mistyped or violates an invariant.

    ``key`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class NumericFailure(RuntimeError):
    """Parameters or gradients became non-finite.

    ``last_good`` carries the last valid checkpoint (if any) so callers can
    still inspect the run up to the failure.
    """

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class SetupError(RuntimeError):
    """The experimental setup could not be prepared (e.g. pretraining cap hit)."""
