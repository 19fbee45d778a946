"""Exception hierarchy shared by all modules."""


class MlmcNacError(Exception):
    """Base class for every error raised by this package."""


class MdpValidationError(MlmcNacError, ValueError):
    """An MDP or feature table violates one of its invariants."""


class MdpParseError(MlmcNacError, ValueError):
    """A model file could not be parsed."""


class ErgodicityError(MlmcNacError):
    """A chain is reducible or periodic, so no unique limiting distribution exists."""


class NonMixingError(MlmcNacError):
    """Total variation did not fall below 1/4 within the power cap."""


class SingularityError(MlmcNacError):
    def __init__(self, message, smallest_singular_value):
        super().__init__(f"{message} (smallest singular value {smallest_singular_value:.3e})")
        self.smallest_singular_value = smallest_singular_value


class DivergenceError(MlmcNacError):
    """An iterate became non-finite or exceeded the divergence threshold."""

    def __init__(self, step, message=None, trace=None):
        super().__init__(message or f"recursion diverged at step {step}")
        self.step = step
        self.trace = trace


class ConfigError(MlmcNacError, ValueError):
    pass


class DataError(MlmcNacError, ValueError):
    pass
