"""Exception types shared across the toolkit."""


class DepthHallucError(Exception):
    """Base class for every error this package raises on purpose."""


class ValidationError(DepthHallucError, ValueError):
    """An argument violates a documented precondition (shape, range, count)."""


class ConfigError(DepthHallucError):
    """Invalid configuration key or value; maps to CLI exit code 2."""


class ManifestError(DepthHallucError):
    """Dataset layout is inconsistent (orphans, duplicates, missing files)."""


class ImageLoadError(DepthHallucError):
    """A file could not be read or decoded; the message names the path."""


class CheckpointError(DepthHallucError):
    """Checkpoint is missing or incompatible with the requested architecture."""


class NumericalError(DepthHallucError):
    """A numerical routine left its valid regime (e.g. matrix sqrt failure)."""


class ProtocolError(DepthHallucError):
    """Recognition protocol precondition violated (e.g. unseen test identity)."""


class NotTrainedError(DepthHallucError):
    """A backbone was queried before it was fitted."""


class TrainingDiverged(DepthHallucError):
    """A non-finite loss was encountered; training aborted."""

    def __init__(self, message, epoch=None, step=None, record=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.record = record or {}
