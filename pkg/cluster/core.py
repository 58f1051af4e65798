"""
Dual-NUMA cluster state machine.

States are immutable values: every operation returns a new ClusterState and
leaves its input untouched. Resources are integer cores and GiB.

Action indices follow the 2N one-hot layout: index l targets PM l // 2 and
NUMA slot l % 2. A double-NUMA request takes half of its demand from each
NUMA of PM l // 2, so l and l ^ 1 denote the same placement; the canonical
index for such a placement is the even one.
"""

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

from cluster.exceptions import (
    ClusterError,
    InfeasibleAllocation,
    InvalidAction,
    UnknownVm,
)


class Op(str, enum.Enum):
    CREATE = "create"
    RELEASE = "release"


class NumaMode(str, enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"


@dataclass(frozen=True)
class NumaResources:
    cpu: int
    mem: int

    def __post_init__(self):
        object.__setattr__(self, "cpu", int(self.cpu))
        object.__setattr__(self, "mem", int(self.mem))
        if self.cpu < 0 or self.mem < 0:
            raise ValueError(f"Negative resources: cpu={self.cpu}, mem={self.mem}")

    def __add__(self, other: "NumaResources") -> "NumaResources":
        return NumaResources(self.cpu + other.cpu, self.mem + other.mem)

    def __sub__(self, other: "NumaResources") -> "NumaResources":
        return NumaResources(self.cpu - other.cpu, self.mem - other.mem)

    def fits(self, demand: "NumaResources") -> bool:
        """Check whether `demand` can be taken from these resources."""
        return demand.cpu <= self.cpu and demand.mem <= self.mem

    def half(self) -> "NumaResources":
        return NumaResources(self.cpu // 2, self.mem // 2)

    def as_tuple(self) -> tuple[int, int]:
        return (self.cpu, self.mem)


ZERO = NumaResources(0, 0)


@dataclass(frozen=True)
class PhysicalMachine:
    id: int
    numa: tuple[NumaResources, NumaResources]
    capacity: tuple[NumaResources, NumaResources]

    def __post_init__(self):
        object.__setattr__(self, "numa", tuple(self.numa))
        object.__setattr__(self, "capacity", tuple(self.capacity))
        if len(self.numa) != 2 or len(self.capacity) != 2:
            raise ValueError(f"PM {self.id} must have exactly two NUMA nodes")
        for remaining, capacity in zip(self.numa, self.capacity):
            if not capacity.fits(remaining):
                raise ValueError(
                    f"PM {self.id}: remaining {remaining} exceeds capacity {capacity}"
                )

    @classmethod
    def empty(cls, pm_id: int, numa_capacity: NumaResources) -> "PhysicalMachine":
        """A PM with both NUMA nodes at full capacity."""
        return cls(
            id=pm_id,
            numa=(numa_capacity, numa_capacity),
            capacity=(numa_capacity, numa_capacity),
        )


@dataclass(frozen=True)
class VmRequest:
    vm_id: str
    resources: NumaResources
    op: Op = Op.CREATE
    numa_mode: NumaMode = NumaMode.SINGLE
    duration: int | None = None
    price_rate: float = 0.0
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "op", Op(self.op))
        object.__setattr__(self, "numa_mode", NumaMode(self.numa_mode))
        if self.duration is not None and self.duration < 0:
            raise ValueError(f"VM {self.vm_id}: negative duration {self.duration}")
        if self.is_double and (self.resources.cpu % 2 or self.resources.mem % 2):
            raise ValueError(
                f"VM {self.vm_id}: double-NUMA demand {self.resources} is not even"
            )

    @property
    def is_double(self) -> bool:
        return self.numa_mode == NumaMode.DOUBLE


@dataclass(frozen=True, order=True)
class Action:
    index: int

    @property
    def pm(self) -> int:
        return self.index // 2

    @property
    def numa_slot(self) -> int:
        return self.index % 2

    def canonical(self, request: VmRequest) -> "Action":
        """Even index for double-NUMA requests, unchanged otherwise."""
        if request.is_double:
            return Action(self.index - self.index % 2)
        return self


@dataclass(frozen=True)
class Placement:
    pm: int
    numa_mode: NumaMode
    demand: tuple[NumaResources, NumaResources]


def numa_demand(request: VmRequest, slot: int) -> tuple[NumaResources, NumaResources]:
    """Per-NUMA demand of placing `request` on NUMA `slot` of a PM."""
    if request.is_double:
        half = request.resources.half()
        return (half, half)
    if slot == 0:
        return (request.resources, ZERO)
    return (ZERO, request.resources)


@dataclass(frozen=True)
class ClusterSnapshot:
    """Array-only view of a cluster: remaining and capacity of shape (N, 2, 2).

    The last axis is (cpu, mem). Snapshots carry no placement records, so they
    support feasibility and ranking but not release.
    """

    remaining: np.ndarray
    capacity: np.ndarray
    pending: VmRequest | None = None

    @property
    def n_pms(self) -> int:
        return self.remaining.shape[0]

    @property
    def n_actions(self) -> int:
        return 2 * self.n_pms

    def cpu_utilization(self) -> float:
        return _cpu_utilization(self.remaining, self.capacity)

    def to_state(self) -> "ClusterState":
        return ClusterState.from_arrays(self.remaining, self.capacity, self.pending)


@dataclass(frozen=True)
class ClusterState:
    pms: tuple[PhysicalMachine, ...]
    pending: VmRequest | None = None
    live_placements: Mapping[str, Placement] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "pms", tuple(self.pms))

    @classmethod
    def homogeneous(cls, n_pms: int, numa_capacity: NumaResources) -> "ClusterState":
        """An empty cluster of `n_pms` identical PMs."""
        return cls(
            pms=tuple(PhysicalMachine.empty(i, numa_capacity) for i in range(n_pms))
        )

    @classmethod
    def from_arrays(cls, remaining, capacity, pending=None) -> "ClusterState":
        pms = []
        for i, (rem, cap) in enumerate(zip(np.asarray(remaining), np.asarray(capacity))):
            pms.append(
                PhysicalMachine(
                    id=i,
                    numa=(NumaResources(*rem[0]), NumaResources(*rem[1])),
                    capacity=(NumaResources(*cap[0]), NumaResources(*cap[1])),
                )
            )
        return cls(pms=tuple(pms), pending=pending)

    @property
    def n_pms(self) -> int:
        return len(self.pms)

    @property
    def n_actions(self) -> int:
        return 2 * len(self.pms)

    @cached_property
    def remaining(self) -> np.ndarray:
        return np.array(
            [[numa.as_tuple() for numa in pm.numa] for pm in self.pms], dtype=np.int64
        ).reshape(len(self.pms), 2, 2)

    @cached_property
    def capacity(self) -> np.ndarray:
        return np.array(
            [[numa.as_tuple() for numa in pm.capacity] for pm in self.pms],
            dtype=np.int64,
        ).reshape(len(self.pms), 2, 2)

    def with_pending(self, request: VmRequest | None) -> "ClusterState":
        return replace(self, pending=request)

    def add_pms(self, count: int, numa_capacity: NumaResources) -> "ClusterState":
        """Append `count` empty PMs with fresh ids."""
        start = len(self.pms)
        new_pms = tuple(
            PhysicalMachine.empty(start + i, numa_capacity) for i in range(count)
        )
        return replace(self, pms=self.pms + new_pms)

    def cpu_utilization(self) -> float:
        """Allocated CPU over total CPU capacity, in [0, 1]."""
        return _cpu_utilization(self.remaining, self.capacity)

    def snapshot(self) -> ClusterSnapshot:
        return ClusterSnapshot(
            remaining=self.remaining.copy(),
            capacity=self.capacity.copy(),
            pending=self.pending,
        )

    def check_invariants(self):
        """Raise ClusterError if placement bookkeeping disagrees with PM resources."""
        used = np.zeros((len(self.pms), 2, 2), dtype=np.int64)
        for vm_id, placement in self.live_placements.items():
            if not 0 <= placement.pm < len(self.pms):
                raise ClusterError(f"VM {vm_id} placed on missing PM {placement.pm}")
            for slot, demand in enumerate(placement.demand):
                used[placement.pm, slot] += demand.as_tuple()
        if not np.array_equal(used, self.capacity - self.remaining):
            raise ClusterError("Live placements do not account for allocated resources")


def _cpu_utilization(remaining: np.ndarray, capacity: np.ndarray) -> float:
    total = int(capacity[..., 0].sum())
    if total == 0:
        return 0.0
    return (total - int(remaining[..., 0].sum())) / total


def _check_index(state, action: Action):
    if not 0 <= action.index < state.n_actions:
        raise InvalidAction(
            f"Action {action.index} out of range for {state.n_pms} PMs"
        )


def feasible(state: ClusterState, action: Action) -> bool:
    """True iff placing the pending request with `action` keeps resources >= 0."""
    _check_index(state, action)
    if state.pending is None:
        return False
    pm = state.pms[action.pm]
    demand = numa_demand(state.pending, action.numa_slot)
    return all(numa.fits(d) for numa, d in zip(pm.numa, demand))


def allocate(state: ClusterState, action: Action) -> ClusterState:
    """Place the pending request; only PM `action.pm` changes."""
    _check_index(state, action)
    request = state.pending
    if request is None or request.op != Op.CREATE:
        raise InvalidAction("Allocation needs a pending create request")
    if not feasible(state, action):
        raise InfeasibleAllocation(
            f"VM {request.vm_id} ({request.resources}) does not fit action {action.index}"
        )
    if request.vm_id in state.live_placements:
        raise ClusterError(f"VM {request.vm_id} is already live")

    pm = state.pms[action.pm]
    demand = numa_demand(request, action.numa_slot)
    new_pm = replace(pm, numa=tuple(numa - d for numa, d in zip(pm.numa, demand)))

    placements = dict(state.live_placements)
    placements[request.vm_id] = Placement(
        pm=action.pm, numa_mode=request.numa_mode, demand=demand
    )
    pms = state.pms[: action.pm] + (new_pm,) + state.pms[action.pm + 1 :]
    return replace(state, pms=pms, live_placements=placements)


def release(state: ClusterState, requests: Iterable[VmRequest]) -> ClusterState:
    """Return the resources of each released VM to its recorded placement."""
    placements = dict(state.live_placements)
    pms = list(state.pms)
    for request in requests:
        if request.op != Op.RELEASE:
            raise ValueError(f"VM {request.vm_id}: expected a release request")
        placement = placements.pop(request.vm_id, None)
        if placement is None:
            raise UnknownVm(f"VM {request.vm_id} is not live")
        pm = pms[placement.pm]
        pms[placement.pm] = replace(
            pm, numa=tuple(numa + d for numa, d in zip(pm.numa, placement.demand))
        )
    return replace(state, pms=tuple(pms), live_placements=placements)


def candidate_post_states(state) -> tuple[np.ndarray, np.ndarray]:
    """Post-allocation NUMA pair of the target PM for every candidate index.

    Works on ClusterState and ClusterSnapshot alike. Single-NUMA requests
    enumerate all 2N indices; double-NUMA requests enumerate the N canonical
    (even) indices. Returns (indices, post) with post of shape (M, 2, 2);
    entries may be negative where the placement is infeasible.
    """
    request = state.pending
    remaining = state.remaining
    n_pms = remaining.shape[0]
    demand = np.array(request.resources.as_tuple(), dtype=np.int64)
    if request.is_double:
        indices = np.arange(0, 2 * n_pms, 2)
        post = remaining - demand // 2
    else:
        indices = np.arange(2 * n_pms)
        post = np.repeat(remaining, 2, axis=0)
        post[indices, indices % 2] -= demand
    return indices, post


def feasible_mask(state) -> tuple[np.ndarray, np.ndarray]:
    """(indices, mask) where mask marks the feasible candidate indices."""
    indices, post = candidate_post_states(state)
    return indices, (post >= 0).all(axis=(1, 2))


def feasible_action_set(state) -> list[Action]:
    """All feasible actions in ascending index order (canonical for double)."""
    if state.pending is None or state.n_pms == 0:
        return []
    indices, mask = feasible_mask(state)
    return [Action(int(i)) for i in indices[mask]]
