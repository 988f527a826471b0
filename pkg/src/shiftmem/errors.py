"""Exception hierarchy. Every error raised by the package derives from ShiftMemError."""


class ShiftMemError(Exception):
    pass


class ConfigError(ShiftMemError, ValueError):
    pass


class ShapeError(ShiftMemError, ValueError):
    pass


class InvalidInputError(ShiftMemError, ValueError):
    pass


class DecodeError(ShiftMemError, OSError):
    pass


class ShiftError(ShiftMemError, ValueError):
    pass


class ContractError(ShiftMemError, ValueError):
    """A loss or metric was called with inputs that violate its contract."""


class StateError(ShiftMemError, ValueError):
    pass


class UndefinedCorrelationError(ShiftMemError, ValueError):
    pass


class CheckpointError(ShiftMemError, OSError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TrainingError(ShiftMemError, RuntimeError):
    pass


class CorpusError(ShiftMemError, ValueError):
    pass
