"""
Feature encodings for the value networks.

Per-PM encoders turn a cluster snapshot into one row per PM with no action
applied (the base rows) and one row per candidate action (its target PM's
row with the action applied). A candidate's cluster value is the sum of the
base rows' values with the target PM's row swapped for the candidate row,
so candidates differ only through their own PM's term.
"""

import enum

import numpy as np

from learning.exceptions import ShapeMismatch


class Encoding(str, enum.Enum):
    LOOK_AHEAD = "look_ahead"
    PRE_STATE = "pre_state"
    FLAT = "flat"


def pm_features(remaining: np.ndarray, capacity: np.ndarray) -> np.ndarray:
    """(N, 4) rows of [cpu0, mem0, cpu1, mem1], each divided by its capacity."""
    return (remaining / capacity).reshape(len(remaining), 4)


def post_allocation(snapshot, indices) -> np.ndarray:
    """(M, 2, 2) remaining resources of each action's target PM after placement."""
    indices = np.asarray(indices, dtype=int)
    request = snapshot.pending
    demand = np.array(request.resources.as_tuple(), dtype=np.int64)
    post = snapshot.remaining[indices // 2].copy()
    if request.is_double:
        post -= demand // 2
    else:
        post[np.arange(len(indices)), indices % 2] -= demand
    return post


class LookAheadEncoder:
    """Rows are PM resources; a candidate row is its PM after the allocation."""

    name = Encoding.LOOK_AHEAD
    width = 4

    def base(self, snapshot) -> np.ndarray:
        return pm_features(snapshot.remaining, snapshot.capacity)

    def candidates(self, snapshot, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        post = post_allocation(snapshot, indices)
        return pm_features(post, snapshot.capacity[indices // 2])


class PreStateEncoder:
    """
    Rows are PM resources before allocation, the request and an action slot.

    Columns: [cpu0, mem0, cpu1, mem1, req_cpu, req_mem, numa0, numa1, double].
    The request is divided by the PM's per-NUMA capacity. Base rows carry an
    all-zero slot, meaning the request is not placed on that PM.
    """

    name = Encoding.PRE_STATE
    width = 9

    def base(self, snapshot) -> np.ndarray:
        n_pms = snapshot.remaining.shape[0]
        request = np.zeros((n_pms, 2))
        if snapshot.pending is not None:
            demand = np.array(snapshot.pending.resources.as_tuple(), dtype=float)
            request = demand / snapshot.capacity[:, 0, :]
        slots = np.zeros((n_pms, 3))
        return np.hstack([pm_features(snapshot.remaining, snapshot.capacity), request, slots])

    def candidates(self, snapshot, indices) -> np.ndarray:
        indices = np.asarray(indices, dtype=int)
        rows = self.base(snapshot)[indices // 2]
        slots = np.full(len(indices), 2) if snapshot.pending.is_double else indices % 2
        rows[np.arange(len(indices)), 6 + slots] = 1.0
        return rows


class FlatEncoder:
    """
    Whole-cluster input for the flat network: all PM features followed by the
    request's cpu and mem (over PM 0's NUMA capacity) and a double-NUMA flag.
    The network has one output per action index.
    """

    name = Encoding.FLAT

    def __init__(self, n_pms: int):
        self.n_pms = n_pms

    @property
    def width(self) -> int:
        return 4 * self.n_pms + 3

    @property
    def n_outputs(self) -> int:
        return 2 * self.n_pms

    def encode(self, snapshot) -> np.ndarray:
        n_pms = snapshot.remaining.shape[0]
        if n_pms != self.n_pms:
            raise ShapeMismatch(
                f"Flat network was built for {self.n_pms} PMs, cluster has {n_pms}"
            )
        request = np.zeros(3)
        if snapshot.pending is not None:
            numa_capacity = snapshot.capacity[0, 0]
            request[:2] = np.array(snapshot.pending.resources.as_tuple()) / numa_capacity
            request[2] = float(snapshot.pending.is_double)
        return np.concatenate(
            [pm_features(snapshot.remaining, snapshot.capacity).ravel(), request]
        )


PER_PM_ENCODERS = {
    Encoding.LOOK_AHEAD: LookAheadEncoder(),
    Encoding.PRE_STATE: PreStateEncoder(),
}


def get_encoder(encoding):
    """Per-PM encoder for a look_ahead or pre_state encoding."""
    encoding = Encoding(encoding)
    if encoding not in PER_PM_ENCODERS:
        raise ValueError(f"{encoding.value} is not a per-PM encoding")
    return PER_PM_ENCODERS[encoding]
