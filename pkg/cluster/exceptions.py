class ClusterError(Exception):
    """Base class for cluster state machine errors."""


class InvalidAction(ClusterError):
    """The action index is outside [0, 2N) for the current cluster."""


class InfeasibleAllocation(ClusterError):
    """Applying the allocation would drive a NUMA resource negative."""


class UnknownVm(ClusterError):
    """A release names a VM that is not live; the trace is malformed."""


class NoFeasibleAction(ClusterError):
    """No PM/NUMA target can host the pending request."""
