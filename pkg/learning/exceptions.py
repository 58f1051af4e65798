class LearningError(Exception):
    """Base class for value-network and agent errors."""


class ShapeMismatch(LearningError):
    """Parameter, gradient or checkpoint shapes do not line up."""


class MissingCheckpoint(LearningError):
    """A learned policy was requested without a readable checkpoint."""
