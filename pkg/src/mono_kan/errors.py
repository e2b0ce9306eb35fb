"""Exceptions raised by mono_kan.

Everything derives from `MonoKanError` so the CLI can map a failure to an exit code
with a single `except`.
"""


class MonoKanError(Exception):
    """Base class for all mono_kan errors."""


class DomainError(MonoKanError, ValueError):
    """A numeric argument is outside the domain of the operation."""


class ArgumentError(MonoKanError, ValueError):
    """Invalid argument: wrong shape, wrong length or unsupported option."""


class StaleTapeError(MonoKanError, RuntimeError):
    """The activation tape was not produced by the model it is used with."""


class ConfigError(MonoKanError):
    """Configuration or descriptor file cannot be parsed or is invalid."""


class DataError(MonoKanError):
    """The dataset does not match its descriptor."""


class ModelFormatError(MonoKanError):
    """The model file is malformed or has an unknown schema version."""


class TrainingDivergedError(MonoKanError, ArithmeticError):
    """The loss became NaN or infinite during training."""


class OutputError(MonoKanError, OSError):
    """An output file or directory cannot be written."""
