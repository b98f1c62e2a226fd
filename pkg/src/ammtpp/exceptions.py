"""Exception types raised across the package."""


class AmmTppError(Exception):
    """Base class for all package errors."""


class InvalidMark(AmmTppError, ValueError):
    pass


class InsufficientData(AmmTppError, ValueError):
    pass


class UnknownEventType(AmmTppError, ValueError):
    def __init__(self, protocol, value):
        self.protocol = protocol
        self.value = value
        super().__init__(f"unknown event type {value!r} for protocol {protocol}")


class MalformedRecord(AmmTppError, ValueError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class DegenerateFit(AmmTppError, ValueError):
    pass


class Undefined(AmmTppError, ValueError):
    pass


class MissingWallclock(AmmTppError, ValueError):
    pass


class InvalidState(AmmTppError, ValueError):
    pass


class InsufficientLiquidity(AmmTppError, ValueError):
    pass


class InvalidTime(AmmTppError, ValueError):
    pass


class NumericalUnderflow(AmmTppError, FloatingPointError):
    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (event {index})"
        super().__init__(message)


class ExplosionAborted(AmmTppError, RuntimeError):
    pass


class EmptyBatch(AmmTppError, ValueError):
    pass


class InvalidWeights(AmmTppError, ValueError):
    pass


class AbortStep(AmmTppError, FloatingPointError):
    pass


class TrainingDiverged(AmmTppError, RuntimeError):
    def __init__(self, epoch, batch, message="loss became non-finite"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} at epoch {epoch}, batch {batch}")


class ShapeError(AmmTppError, ValueError):
    pass
