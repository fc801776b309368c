"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class ObjdiscoError(Exception):
    """Base class for all errors raised by objdisco."""


class ConfigError(ObjdiscoError, ValueError):
    """A configuration file or override could not be parsed or validated."""


class DatasetError(ObjdiscoError):
    """A dataset on disk is missing, corrupt or inconsistent."""


class InvalidPoseError(ObjdiscoError, ValueError):
    """A camera pose whose rotation is not a proper orthonormal matrix."""


class BehindCameraError(ObjdiscoError, ValueError):
    """A point with non-positive depth was passed to the projection."""


class DegenerateEmbeddingError(ObjdiscoError, ValueError):
    """The pre-normalization embedding vector is (numerically) zero."""


class OvercrowdedWorldError(ObjdiscoError, ValueError):
    """Objects could not be placed without interpenetration."""


class EmptyLabeledSetError(ObjdiscoError, ValueError):
    """A nearest-neighbor detector was requested without labeled examples."""


class StageError(ObjdiscoError):
    """A pipeline stage failed.

    Carries the stage name so the CLI can report where the run stopped.
    """

    def __init__(self, stage: str, cause: BaseException | str):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
