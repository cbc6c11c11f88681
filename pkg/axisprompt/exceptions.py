"""Exception hierarchy for the axisprompt toolkit."""

from typing import Optional


class AxisPromptError(Exception):
    """Base class for all toolkit errors."""


# Input and geometry errors


class MalformedFile(AxisPromptError, ValueError):
    """A point file is truncated or does not match its declared format."""


class UnsupportedProperty(AxisPromptError, ValueError):
    """A point file declares an element or property the toolkit does not read."""


class EmptySelection(AxisPromptError, ValueError):
    """A selection of points (whole cloud or one instance) is empty."""


class DegenerateGeometry(AxisPromptError, ValueError):
    """Points are too few or too collinear for a principal-axis frame."""


class TooFewPoints(AxisPromptError, ValueError):
    """A neighborhood query asked for more neighbors than the cloud holds."""


class MissingNormals(AxisPromptError, ValueError):
    """An operation needs per-point normals and the cloud has none."""


class DimensionMismatch(AxisPromptError, ValueError):
    """Raster dimensions disagree with the camera or view they belong to."""


class InvalidAxisSpec(AxisPromptError, ValueError):
    """An axis layout does not cover the scene it is drawn into."""


# Mark and prompt errors


class MissingInstanceLabels(AxisPromptError, ValueError):
    """The scene carries no instance ids."""


class EmptyMask(AxisPromptError, ValueError):
    """A mask has no member pixels."""


class MissingMask(AxisPromptError, ValueError):
    """A mark plan entry has no mask for a mask-derived style."""


class UnfilledSlot(AxisPromptError, ValueError):
    """A task template references a slot that was not provided."""


class NoOtherInstance(AxisPromptError, ValueError):
    """A reference hint needs a second instance and the scene has one."""


# Evaluation errors


class UnknownTask(AxisPromptError, ValueError):
    """The task kind is not supported, or the ground truth does not cover it."""


class EmptyRun(AxisPromptError, ValueError):
    """There are no records to aggregate."""


class LengthMismatch(AxisPromptError, ValueError):
    """Prediction and ground-truth lists are not aligned."""


class UnknownKeypoint(AxisPromptError, ValueError):
    """A skeleton edge names a keypoint that was not predicted."""


# Pipeline errors


class SceneLoadError(AxisPromptError):
    """A scene could not be loaded or prepared."""

    def __init__(self, scene_id: str, message: str) -> None:
        super().__init__(f"scene {scene_id}: {message}")
        self.scene_id = scene_id


# Client errors


class ChatError(AxisPromptError):
    """Base class for chat endpoint failures."""

    retryable: bool = False

    def __init__(self, message: str, status_code: Optional[int] = None) -> None:
        super().__init__(message)
        self.status_code = status_code


class AuthError(ChatError):
    """Credentials are missing or were rejected."""


class BadRequest(ChatError):
    """The endpoint rejected the request itself."""


class RateLimited(ChatError):
    """The endpoint asked the client to slow down."""

    retryable = True


class TransportError(ChatError):
    """The connection failed or the server errored."""

    retryable = True


class GiveUp(ChatError):
    """All retry attempts were exhausted."""

    def __init__(self, message: str, attempts: int) -> None:
        super().__init__(message)
        self.attempts = attempts
