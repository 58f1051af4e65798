"""
Episode engine.

An episode replays a trace against a cluster: it presents one create request
at a time, applies the policy's action, then processes every release up to
the next create. Non-expansion episodes end when the pending request fits
nowhere; expansion episodes first grow the cluster up to its cap. Running
out of trace ends either kind.
"""

import enum
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from cluster.core import Op, allocate, feasible_action_set, release
from simulation.exceptions import EpisodeFinished
from traces.utils import ScenarioConfig, Trace, warm_start

logger = logging.getLogger(__name__)


class RewardKind(str, enum.Enum):
    # +1 per placed VM, or its cpu share of the cluster
    UNIT = "unit"
    CPU = "cpu"


@dataclass(frozen=True)
class ExpansionEvent:
    t: int
    n_pms: int


@dataclass
class EpisodeResult:
    scheduled_length: int
    avg_cpu_utilization: float
    income: float
    steps: int
    total_reward: float = 0.0
    expansion_events: list[ExpansionEvent] = field(default_factory=list)
    n_pms_final: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeResult":
        data = dict(data)
        data["expansion_events"] = [
            ExpansionEvent(**event) for event in data.get("expansion_events", [])
        ]
        return cls(**data)


class Episode:
    def __init__(self, scenario: ScenarioConfig, trace: Trace, state=None, reward=RewardKind.UNIT):
        self.scenario = scenario
        self.events = trace.events
        self.end_time = trace.end_time
        self.cursor = 0
        self.reward_kind = RewardKind(reward)
        if state is None:
            state = scenario.initial_state()
        self.state = state.with_pending(None)
        self.initial_utilization = self.state.cpu_utilization()

        self.scheduled_length = 0
        self.steps = 0
        self.income = 0.0
        self.total_reward = 0.0
        self.cpu_utilization_samples = []
        self.expansion_events = []
        self.done = False
        self._present_next()

    @property
    def pending(self):
        return self.state.pending

    def _process_releases(self):
        released = []
        while self.cursor < len(self.events) and self.events[self.cursor].op == Op.RELEASE:
            released.append(self.events[self.cursor])
            self.cursor += 1
        if released:
            self.state = release(self.state, released)

    def _present_next(self):
        self._process_releases()
        if self.cursor >= len(self.events):
            self.state = self.state.with_pending(None)
            self.done = True
            logger.debug(f"Trace exhausted after {self.scheduled_length} placements")
            return

        request = self.events[self.cursor]
        self.cursor += 1
        self.state = self.state.with_pending(request)
        if feasible_action_set(self.state):
            return
        while self.maybe_expand():
            if feasible_action_set(self.state):
                return
        self.done = True
        logger.debug(
            f"VM {request.vm_id} fits nowhere on {self.state.n_pms} PMs; "
            f"episode ends after {self.scheduled_length} placements"
        )

    def maybe_expand(self) -> bool:
        """
        Add up to expansion_step empty PMs, never beyond n_pms_max.

        Called when the pending create fits nowhere. Returns False in
        non-expansion mode or once the cap is reached.
        """
        scenario = self.scenario
        if not scenario.expands or self.state.n_pms >= scenario.n_pms_max:
            return False
        count = min(scenario.expansion_step, scenario.n_pms_max - self.state.n_pms)
        self.state = self.state.add_pms(count, scenario.pm_capacity)
        t = self.pending.t if self.pending is not None else self.end_time
        self.expansion_events.append(ExpansionEvent(t=t, n_pms=self.state.n_pms))
        logger.info(f"Cluster expanded to {self.state.n_pms} PMs at t={t}")
        return True

    def _income(self, request) -> float:
        duration = request.duration
        if duration is None:
            duration = max(self.end_time - request.t, 0)
        return duration * request.price_rate

    def step(self, action) -> tuple[float, bool]:
        """
        Place the pending create with `action` and advance to the next create.

        Raises:
            EpisodeFinished: the episode is already done
            InfeasibleAllocation: the action does not fit the pending request
        """
        if self.done:
            raise EpisodeFinished("Episode is finished")
        request = self.pending
        total_cpu = int(self.state.capacity[..., 0].sum())
        self.state = allocate(self.state, action)

        if self.reward_kind == RewardKind.CPU:
            reward = request.resources.cpu / total_cpu
        else:
            reward = 1.0
        self.scheduled_length += 1
        self.steps += 1
        self.total_reward += reward
        self.income += self._income(request)

        self._process_releases()
        self.cpu_utilization_samples.append(self.state.cpu_utilization())
        self._present_next()
        return reward, self.done

    def result(self) -> EpisodeResult:
        samples = self.cpu_utilization_samples
        avg = float(np.mean(samples)) if samples else self.initial_utilization
        return EpisodeResult(
            scheduled_length=self.scheduled_length,
            avg_cpu_utilization=avg,
            income=self.income,
            steps=self.steps,
            total_reward=self.total_reward,
            expansion_events=list(self.expansion_events),
            n_pms_final=self.state.n_pms,
        )


def prepare_episode(scenario: ScenarioConfig, trace: Trace):
    """Initial cluster of the scenario, warm-started from the trace: (state, remaining trace)."""
    return warm_start(scenario.initial_state(), trace, scenario.warm_start_ratio)


def run_episode(
    scenario: ScenarioConfig,
    trace: Trace,
    policy,
    rng,
    initial_state=None,
    reward=RewardKind.UNIT,
) -> EpisodeResult:
    """
    Run `policy(state, rng) -> Action` until the episode ends.

    `trace` and `initial_state` are expected to be warm-started already.
    """
    episode = Episode(scenario, trace, state=initial_state, reward=reward)
    while not episode.done:
        episode.step(policy(episode.state, rng))
    return episode.result()


def evaluate_policy(scenario: ScenarioConfig, trace: Trace, policy, seed: int) -> EpisodeResult:
    """Warm start, then one seeded episode."""
    state, rest = prepare_episode(scenario, trace)
    return run_episode(scenario, rest, policy, np.random.default_rng(seed), initial_state=state)
