class SimulationError(Exception):
    """Base class for episode engine errors."""


class EpisodeFinished(SimulationError):
    """A step was requested after the episode ended."""


class UnknownPolicy(SimulationError):
    """The policy name is not registered."""
