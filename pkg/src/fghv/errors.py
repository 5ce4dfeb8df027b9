"""Exception taxonomy shared by all fghv modules.

Every error raised on purpose by this package derives from FghvError, so the
CLI can catch one type and turn it into a nonzero exit code with a message.
"""


class FghvError(Exception):
    """Base class for all errors raised by fghv."""


class ConfigError(FghvError, ValueError):
    """A configuration value or combination of values is invalid."""


class DataError(FghvError, ValueError):
    """A dataset file or raw input is malformed or has the wrong dimension."""


class ShapeError(FghvError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(FghvError, RuntimeError):
    """An operation was called in a state that violates its contract."""


class DegenerateFeatureError(FghvError, ValueError):
    """A feature vector has a near-zero norm and cannot enter a cosine."""


class CheckpointError(FghvError, ValueError):
    """A checkpoint file is missing, corrupt, or has an unsupported version."""


class MetricError(FghvError, ValueError):
    """A metric was requested on inputs that cannot support it."""


class OptimizationError(FghvError, RuntimeError):
    """Latent optimization produced a non-finite update."""
