import enum
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from cluster.core import (
    ClusterState,
    NumaMode,
    NumaResources,
    Op,
    VmRequest,
    allocate,
    release,
)
from cluster.exceptions import NoFeasibleAction
from schedulers.heuristics import best_fit
from traces.exceptions import OrderingError, ParseError, WarmStartUnreachable

logger = logging.getLogger(__name__)

# Field order of one trace line
TRACE_FIELDS = ("t", "vm_id", "op", "cpu", "mem", "numa_mode", "duration", "price_rate")

# Requests with at least this many cores are generated as double-NUMA
DOUBLE_NUMA_MIN_CPU = 8


@dataclass(frozen=True)
class VmType:
    name: str
    cpu: int
    mem: int
    numa_mode: NumaMode
    weight: float
    mean_duration: float | None
    price_rate: float

    def to_dict(self) -> dict:
        data = asdict(self)
        data["numa_mode"] = NumaMode(self.numa_mode).value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "VmType":
        cpu = int(data["cpu"])
        numa_mode = data.get("numa_mode")
        if numa_mode is None:
            numa_mode = NumaMode.DOUBLE if cpu >= DOUBLE_NUMA_MIN_CPU else NumaMode.SINGLE
        mean_duration = data.get("mean_duration")
        return cls(
            name=str(data.get("name", f"c{cpu}")),
            cpu=cpu,
            mem=int(data.get("mem", 2 * cpu)),
            numa_mode=NumaMode(numa_mode),
            weight=float(data.get("weight", 1.0)),
            mean_duration=None if mean_duration is None else float(mean_duration),
            price_rate=float(data.get("price_rate", 0.05 * cpu)),
        )


def default_catalog() -> list[VmType]:
    """
    Synthetic VM-type catalog.

    Shapes of 1, 2, 4, 8 and 16 cores with mem = 2 x cpu; shapes of 8 cores
    and more are double-NUMA. Prices are synthetic and scale with cores.
    """
    weights = {1: 0.30, 2: 0.30, 4: 0.20, 8: 0.12, 16: 0.08}
    durations = {1: 150.0, 2: 200.0, 4: 250.0, 8: 300.0, 16: 300.0}
    return [
        VmType(
            name=f"c{cpu}m{2 * cpu}",
            cpu=cpu,
            mem=2 * cpu,
            numa_mode=NumaMode.DOUBLE if cpu >= DOUBLE_NUMA_MIN_CPU else NumaMode.SINGLE,
            weight=weight,
            mean_duration=durations[cpu],
            price_rate=round(0.05 * cpu, 4),
        )
        for cpu, weight in weights.items()
    ]


@dataclass(frozen=True)
class Trace:
    events: tuple[VmRequest, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.events)

    @property
    def creates(self) -> list[VmRequest]:
        return [event for event in self.events if event.op == Op.CREATE]

    @property
    def end_time(self) -> int:
        return self.events[-1].t if self.events else 0


class ScenarioMode(str, enum.Enum):
    NON_EXPANSION = "non-expansion"
    EXPANSION = "expansion"


@dataclass(frozen=True)
class ScenarioConfig:
    n_pms_initial: int = 5
    warm_start_ratio: float = 0.0
    mode: ScenarioMode = ScenarioMode.NON_EXPANSION
    expansion_step: int = 10
    n_pms_max: int | None = None
    pm_capacity: NumaResources = NumaResources(32, 64)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", ScenarioMode(self.mode))
        if self.n_pms_max is None:
            object.__setattr__(self, "n_pms_max", self.n_pms_initial)
        if not 0 <= self.warm_start_ratio < 1:
            raise ValueError(f"warm_start_ratio {self.warm_start_ratio} not in [0, 1)")
        if self.mode == ScenarioMode.EXPANSION and self.n_pms_initial > self.n_pms_max:
            raise ValueError(
                f"n_pms_initial {self.n_pms_initial} exceeds n_pms_max {self.n_pms_max}"
            )

    @property
    def expands(self) -> bool:
        return self.mode == ScenarioMode.EXPANSION

    def descriptor(self, with_warm_start: bool = True) -> str:
        """Short scenario label, e.g. "non-expansion/N=50/ws=0.5"."""
        label = f"{self.mode.value}/N={self.n_pms_initial}"
        if self.expands:
            label += f"-{self.n_pms_max}"
        if not with_warm_start:
            return label
        return f"{label}/ws={self.warm_start_ratio:g}"

    def to_dict(self) -> dict:
        return {
            "n_pms_initial": self.n_pms_initial,
            "warm_start_ratio": self.warm_start_ratio,
            "mode": self.mode.value,
            "expansion_step": self.expansion_step,
            "n_pms_max": self.n_pms_max,
            "pm_capacity": {"cpu": self.pm_capacity.cpu, "mem": self.pm_capacity.mem},
            "seed": self.seed,
        }

    def initial_state(self) -> ClusterState:
        return ClusterState.homogeneous(self.n_pms_initial, self.pm_capacity)


def request_to_record(request: VmRequest) -> dict:
    return {
        "t": request.t,
        "vm_id": request.vm_id,
        "op": request.op.value,
        "cpu": request.resources.cpu,
        "mem": request.resources.mem,
        "numa_mode": request.numa_mode.value,
        "duration": request.duration,
        "price_rate": request.price_rate,
    }


def record_to_request(record: dict, line=None) -> VmRequest:
    missing = [name for name in TRACE_FIELDS if name not in record]
    if missing:
        raise ParseError(f"missing fields {', '.join(missing)}", line=line)
    try:
        duration = record["duration"]
        return VmRequest(
            vm_id=str(record["vm_id"]),
            resources=NumaResources(record["cpu"], record["mem"]),
            op=Op(record["op"]),
            numa_mode=NumaMode(record["numa_mode"]),
            duration=None if duration is None else int(duration),
            price_rate=float(record["price_rate"]),
            t=int(record["t"]),
        )
    except (TypeError, ValueError) as e:
        raise ParseError(str(e), line=line) from e


def validate_events(events) -> None:
    """Raise OrderingError unless events are time-sorted and releases follow creates."""
    created = set()
    live = set()
    last_t = None
    for event in events:
        if last_t is not None and event.t < last_t:
            raise OrderingError(
                f"VM {event.vm_id} at t={event.t} is listed after t={last_t}"
            )
        last_t = event.t
        if event.op == Op.CREATE:
            if event.vm_id in created:
                raise OrderingError(f"VM {event.vm_id} is created twice")
            created.add(event.vm_id)
            live.add(event.vm_id)
        else:
            if event.vm_id not in live:
                raise OrderingError(f"Release of VM {event.vm_id} precedes its create")
            live.remove(event.vm_id)


def save_trace(trace: Trace, path) -> None:
    """Write one JSON object per line; metadata, if any, goes on the first line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        if trace.metadata:
            f.write(json.dumps({"metadata": trace.metadata}) + "\n")
        for event in trace.events:
            f.write(json.dumps(request_to_record(event)) + "\n")


def load_trace(path) -> Trace:
    """
    Read a JSON-lines trace.

    Raises:
        ParseError: a line is not a JSON object with the trace fields
        OrderingError: events are out of order or a release precedes its create
    """
    events = []
    metadata = {}
    with Path(path).open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line=line_no) from e
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", line=line_no)
            if "metadata" in record and not events and not metadata:
                metadata = record["metadata"]
                continue
            events.append(record_to_request(record, line=line_no))

    validate_events(events)
    return Trace(events=tuple(events), metadata=metadata)


def generate_trace(catalog: list[VmType], length: int, seed: int, arrival_rate: float = 1.0) -> Trace:
    """
    Generate a synthetic trace of `length` creates.

    Creates arrive `arrival_rate` per time unit, so the n-th create arrives at
    t = floor(n / arrival_rate). Each has a type drawn i.i.d. from the catalog
    weights. Its release follows after a geometric duration with the type's
    mean; types without a mean duration are never released. At equal t,
    releases are listed before creates.
    """
    if not catalog:
        raise ValueError("catalog is empty")
    if length <= 0:
        raise ValueError(f"length must be positive, got {length}")
    if arrival_rate <= 0:
        raise ValueError(f"arrival_rate must be positive, got {arrival_rate}")

    rng = np.random.default_rng(seed)
    weights = np.array([vm_type.weight for vm_type in catalog], dtype=float)
    type_ids = rng.choice(len(catalog), size=length, p=weights / weights.sum())
    means = np.array(
        [vm_type.mean_duration or 1.0 for vm_type in catalog], dtype=float
    )
    draws = rng.geometric(1.0 / np.maximum(means[type_ids], 1.0))

    keyed = []
    for n, (type_id, draw) in enumerate(zip(type_ids, draws)):
        vm_type = catalog[type_id]
        t = int(n // arrival_rate)
        duration = None if vm_type.mean_duration is None else int(draw)
        create = VmRequest(
            vm_id=f"vm-{n:06d}",
            resources=NumaResources(vm_type.cpu, vm_type.mem),
            op=Op.CREATE,
            numa_mode=vm_type.numa_mode,
            duration=duration,
            price_rate=vm_type.price_rate,
            t=t,
        )
        keyed.append(((t, 1, n), create))
        if duration is not None:
            keyed.append(
                ((t + duration, 0, n), _release_for(create, t=t + duration))
            )
    keyed.sort(key=lambda item: item[0])

    metadata = {
        "seed": seed,
        "length": length,
        "arrival_rate": arrival_rate,
        "catalog": [vm_type.to_dict() for vm_type in catalog],
        "synthetic_prices": True,
    }
    return Trace(events=tuple(event for _, event in keyed), metadata=metadata)


def _release_for(create: VmRequest, t: int) -> VmRequest:
    return VmRequest(
        vm_id=create.vm_id,
        resources=create.resources,
        op=Op.RELEASE,
        numa_mode=create.numa_mode,
        duration=create.duration,
        price_rate=create.price_rate,
        t=t,
    )


def warm_start(state: ClusterState, trace: Trace, ratio: float):
    """
    Pre-fill the cluster with Best-Fit until CPU utilization reaches `ratio`.

    Creates that fit nowhere are skipped, and so are their releases. Returns
    the filled state (no pending request) and the unconsumed trace suffix.

    Raises:
        WarmStartUnreachable: the trace ran out before reaching `ratio`
    """
    if not 0 <= ratio < 1:
        raise ValueError(f"warm start ratio {ratio} not in [0, 1)")
    if state.cpu_utilization() >= ratio:
        return state, trace

    events = trace.events
    skipped = set()
    cursor = 0
    placed = 0
    peak = state.cpu_utilization()
    while state.cpu_utilization() < ratio:
        if cursor >= len(events):
            raise WarmStartUnreachable(
                f"Trace exhausted at peak utilization {peak:.3f} < {ratio}", peak=peak
            )
        event = events[cursor]
        cursor += 1
        if event.op == Op.RELEASE:
            if event.vm_id in skipped:
                skipped.discard(event.vm_id)
            else:
                state = release(state, [event])
            continue

        state = state.with_pending(event)
        try:
            action = best_fit(state)
        except NoFeasibleAction:
            skipped.add(event.vm_id)
            continue
        state = allocate(state, action)
        placed += 1
        peak = max(peak, state.cpu_utilization())

    rest = tuple(
        event
        for event in events[cursor:]
        if not (event.op == Op.RELEASE and event.vm_id in skipped)
    )
    logger.debug(
        f"Warm start placed {placed} VMs, skipped {len(skipped)}, "
        f"utilization {state.cpu_utilization():.3f}"
    )
    return state.with_pending(None), Trace(events=rest, metadata=trace.metadata)
