"""
Decomposed value agent and the flat Double DQN baseline.

The decomposed agent scores a candidate action by the sum of per-PM values
of the cluster after the action. Every PM shares one network. Only the
target PM's term changes between candidates, so the argmax is taken over the
per-PM benefit Q(candidate row) - Q(base row of its PM).
"""

import logging
import threading
from dataclasses import asdict, dataclass, field, replace
from functools import partial

import numpy as np

from cluster.core import Action, ClusterSnapshot, feasible_mask
from cluster.exceptions import InfeasibleAllocation, NoFeasibleAction
from learning.checkpoints import load_checkpoint, load_replay, save_checkpoint
from learning.exceptions import LearningError, ShapeMismatch
from learning.features import Encoding, FlatEncoder, get_encoder, post_allocation
from learning.network import (
    DEFAULT_GRAD_CLIP,
    DEFAULT_HIDDEN,
    Learner,
    adam_step,
    backward,
    backward_selected,
    clip_by_global_norm,
    forward,
    init_mlp,
    layer_sizes,
    q_values,
    soft_update,
)
from schedulers.heuristics import CandidateFilter, CandidateSet
from simulation.env import RewardKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.75
    epsilon: float = 0.1
    batch_size: int = 2048
    lr: float = 5e-4
    tau: float = 0.01
    epochs: int = 3000
    episodes_per_epoch: int = 5
    k: int = 5
    buffer_capacity: int = 100_000
    hidden: int = DEFAULT_HIDDEN
    grad_clip: float | None = DEFAULT_GRAD_CLIP
    update_every: int = 1
    reward: RewardKind = RewardKind.UNIT
    encoding: Encoding = Encoding.LOOK_AHEAD
    workers: int | None = None
    checkpoint_every: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "reward", RewardKind(self.reward))
        object.__setattr__(self, "encoding", Encoding(self.encoding))
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not 0 <= self.tau <= 1:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        for name in ("batch_size", "episodes_per_epoch", "k", "buffer_capacity", "hidden", "update_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def n_workers(self) -> int:
        return self.workers or self.episodes_per_epoch

    def to_dict(self) -> dict:
        data = asdict(self)
        data["reward"] = self.reward.value
        data["encoding"] = self.encoding.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "AgentConfig":
        known = {name: value for name, value in data.items() if name in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class Transition:
    state: ClusterSnapshot
    action: Action
    reward: float
    next_state: ClusterSnapshot
    done: bool
    # Candidate indices of next_state under the acting filter
    next_candidates: tuple[int, ...] = ()
    cache: dict = field(default_factory=dict, repr=False, compare=False)


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest transition is evicted first."""

    def __init__(self, capacity: int = 100_000):
        self.capacity = capacity
        self._items = []
        self._position = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._items)

    def append(self, transition: Transition):
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(transition)
            else:
                self._items[self._position] = transition
                self._position = (self._position + 1) % self.capacity

    def extend(self, transitions):
        for transition in transitions:
            self.append(transition)

    def sample(self, batch_size: int, rng) -> list[Transition]:
        """Uniform sample with replacement."""
        with self._lock:
            indices = rng.integers(0, len(self._items), size=batch_size)
            return [self._items[i] for i in indices]

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def as_value_function(params):
    """A callable mapping (M, d) feature rows to (M,) values."""
    if callable(params):
        return params
    return partial(q_values, params)


def _indices(candidates) -> np.ndarray:
    return np.array([action.index for action in candidates], dtype=int)


def _check_feasible(state, indices):
    post = post_allocation(state, indices)
    bad = ~(post >= 0).all(axis=(1, 2))
    if bad.any():
        raise InfeasibleAllocation(
            f"Candidates {indices[bad].tolist()} do not fit VM {state.pending.vm_id}"
        )


def pm_benefits(state, candidates, params, encoder=None) -> np.ndarray:
    """
    Per-candidate benefit on the target PM: Q(row after action) - Q(row before).

    All other PM terms are shared by every candidate, so ranking candidates by
    benefit ranks them by cluster value.
    """
    encoder = encoder or get_encoder(Encoding.LOOK_AHEAD)
    value = as_value_function(params)
    indices = _indices(candidates)
    _check_feasible(state, indices)
    base = value(encoder.base(state))
    return value(encoder.candidates(state, indices)) - base[indices // 2]


def evaluate_candidates(state, candidates, params, encoder=None) -> list[tuple[Action, float]]:
    """
    Cluster value of each candidate: the sum over PMs of the per-PM values
    after the action, in candidate order.

    Raises:
        InfeasibleAllocation: a candidate does not fit the pending request
    """
    encoder = encoder or get_encoder(Encoding.LOOK_AHEAD)
    value = as_value_function(params)
    indices = _indices(candidates)
    _check_feasible(state, indices)
    base = value(encoder.base(state))
    values = base.sum() - base[indices // 2] + value(encoder.candidates(state, indices))
    return [(action, float(v)) for action, v in zip(candidates, values)]


def naive_cluster_values(state, candidates, params, encoder=None) -> np.ndarray:
    """Reference scoring that re-sums every PM row for each candidate."""
    encoder = encoder or get_encoder(Encoding.LOOK_AHEAD)
    value = as_value_function(params)
    indices = _indices(candidates)
    base = encoder.base(state)
    rows = encoder.candidates(state, indices)
    values = []
    for index, row in zip(indices, rows):
        features = base.copy()
        features[index // 2] = row
        values.append(value(features).sum())
    return np.array(values)


def _best(values: np.ndarray, indices: np.ndarray) -> int:
    # Position of the highest value; ties go to the lowest action index
    return int(np.lexsort((indices, -values))[0])


def select_action(state, candidates, params, epsilon, rng, encoder=None) -> Action:
    """
    Epsilon-greedy choice among the candidates.

    Raises:
        NoFeasibleAction: the candidate set is empty
    """
    actions = list(candidates)
    if not actions:
        raise NoFeasibleAction("Empty candidate set")
    if epsilon and rng.random() < epsilon:
        return actions[int(rng.integers(len(actions)))]
    benefits = pm_benefits(state, actions, params, encoder)
    return actions[_best(benefits, _indices(actions))]


def _transition_rows(transition: Transition, encoder) -> np.ndarray:
    # PM rows of the state after the stored action
    key = ("rows", encoder.name)
    if key not in transition.cache:
        state = transition.state
        rows = encoder.base(state)
        index = transition.action.index
        rows[index // 2] = encoder.candidates(state, [index])[0]
        transition.cache[key] = rows.astype(np.float32)
    return transition.cache[key]


def _next_features(transition: Transition, encoder):
    key = ("next", encoder.name)
    if key not in transition.cache:
        state = transition.next_state
        indices = np.array(transition.next_candidates, dtype=int)
        transition.cache[key] = (
            encoder.base(state).astype(np.float32),
            encoder.candidates(state, indices).astype(np.float32),
            indices,
        )
    return transition.cache[key]


def compute_targets(batch, online, target, gamma, encoder=None) -> np.ndarray:
    """
    Double DQN targets Y = r + gamma * V'(s'), with Y = r at terminal states.

    The online network picks the next action among the next state's
    candidates; the target network values the cluster after that action.
    """
    encoder = encoder or get_encoder(Encoding.LOOK_AHEAD)
    targets = np.array([t.reward for t in batch], dtype=float)
    live = [i for i, t in enumerate(batch) if not t.done and t.next_candidates]
    if gamma == 0 or not live:
        return targets

    features = [_next_features(batch[i], encoder) for i in live]
    x_base = np.concatenate([base for base, _, _ in features])
    x_cand = np.concatenate([cand for _, cand, _ in features])
    online_value, target_value = as_value_function(online), as_value_function(target)
    online_base, online_cand = online_value(x_base), online_value(x_cand)
    target_base, target_cand = target_value(x_base), target_value(x_cand)

    base_start = cand_start = 0
    for i, (base, cand, indices) in zip(live, features):
        base_rows = slice(base_start, base_start + len(base))
        cand_rows = slice(cand_start, cand_start + len(cand))
        pms = indices // 2
        benefits = online_cand[cand_rows] - online_base[base_rows][pms]
        j = _best(benefits, indices)
        next_value = (
            target_base[base_rows].sum()
            - target_base[base_rows][pms[j]]
            + target_cand[cand_rows][j]
        )
        targets[i] += gamma * next_value
        base_start += len(base)
        cand_start += len(cand)
    return targets


def train_step(buffer: ReplayBuffer, learner: Learner, cfg: AgentConfig, rng, encoder=None):
    """
    One Adam step on a sampled batch, then a soft target update.

    Returns the batch loss, or None (and leaves the learner untouched) while
    the buffer holds fewer transitions than a batch.
    """
    if len(buffer) < cfg.batch_size:
        return None
    encoder = encoder or get_encoder(cfg.encoding)
    batch = buffer.sample(cfg.batch_size, rng)
    targets = compute_targets(batch, learner.online, learner.target, cfg.gamma, encoder)
    samples = [(_transition_rows(t, encoder), y) for t, y in zip(batch, targets)]
    grads, loss = backward(learner.online, samples)
    grads = clip_by_global_norm(grads, cfg.grad_clip)
    learner.online, learner.opt = adam_step(learner.online, grads, learner.opt)
    learner.target = soft_update(learner.online, learner.target, cfg.tau)
    logger.debug(f"Update {learner.opt.step}: loss {loss:.6f}")
    return loss


def _action_mask(state) -> np.ndarray:
    mask = np.zeros(2 * state.remaining.shape[0], dtype=bool)
    if state.pending is not None:
        indices, feasible = feasible_mask(state)
        mask[indices[feasible]] = True
    return mask


def flat_q_values(params, state, encoder: FlatEncoder) -> np.ndarray:
    return forward(params, encoder.encode(state))


def flat_dqn_policy(state, params, encoder: FlatEncoder | None = None) -> Action:
    """
    Masked argmax of the flat network's per-action outputs; ties go to the
    lowest feasible index.

    Raises:
        NoFeasibleAction: no action fits the pending request
    """
    encoder = encoder or FlatEncoder(state.remaining.shape[0])
    mask = _action_mask(state)
    if not mask.any():
        raise NoFeasibleAction("No PM can host the pending request")
    values = np.where(mask, flat_q_values(params, state, encoder), -np.inf)
    return Action(int(np.argmax(values)))


def compute_flat_targets(batch, online, target, gamma, encoder: FlatEncoder) -> np.ndarray:
    targets = np.array([t.reward for t in batch], dtype=float)
    live = [i for i, t in enumerate(batch) if not t.done]
    if gamma == 0 or not live:
        return targets
    inputs = np.stack([encoder.encode(batch[i].next_state) for i in live])
    masks = np.stack([_action_mask(batch[i].next_state) for i in live])
    online_q = np.where(masks, forward(online, inputs), -np.inf)
    chosen = np.argmax(online_q, axis=1)
    target_q = forward(target, inputs)[np.arange(len(live)), chosen]
    targets[live] += gamma * target_q
    return targets


def flat_train_step(buffer: ReplayBuffer, learner: Learner, cfg: AgentConfig, rng, encoder: FlatEncoder):
    if len(buffer) < cfg.batch_size:
        return None
    batch = buffer.sample(cfg.batch_size, rng)
    targets = compute_flat_targets(batch, learner.online, learner.target, cfg.gamma, encoder)
    inputs = np.stack([encoder.encode(t.state) for t in batch])
    outputs = [t.action.index for t in batch]
    grads, loss = backward_selected(learner.online, inputs, outputs, targets)
    grads = clip_by_global_norm(grads, cfg.grad_clip)
    learner.online, learner.opt = adam_step(learner.online, grads, learner.opt)
    learner.target = soft_update(learner.online, learner.target, cfg.tau)
    logger.debug(f"Update {learner.opt.step}: loss {loss:.6f}")
    return loss


def _init_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence([seed]))


class CvdAgent:
    """Decomposed per-PM value agent acting over the filtered candidate set."""

    kind = "cvd_rl"
    epoch = 0

    def __init__(self, config: AgentConfig, candidate_filter: CandidateFilter | None = None, learner=None):
        if config.encoding == Encoding.FLAT:
            raise LearningError("The flat encoding belongs to FlatDqnAgent")
        self.config = config
        self.encoder = get_encoder(config.encoding)
        self.candidate_filter = candidate_filter or CandidateFilter(k=config.k)
        if learner is None:
            params = init_mlp(layer_sizes(self.encoder.width, config.hidden), _init_rng(config.seed))
            learner = Learner.create(params, lr=config.lr)
        self.learner = learner
        self.buffer = ReplayBuffer(config.buffer_capacity)

    def candidates(self, state) -> CandidateSet:
        return self.candidate_filter(state)

    def act(self, state, rng, epsilon=None, params=None, candidates=None) -> tuple[Action, CandidateSet]:
        if candidates is None:
            candidates = self.candidates(state)
        epsilon = self.config.epsilon if epsilon is None else epsilon
        params = self.learner.online if params is None else params
        action = select_action(state, candidates, params, epsilon, rng, self.encoder)
        return action, candidates

    def make_transition(self, state, action, reward, next_state, done, next_candidates=None) -> Transition:
        if next_candidates is None and not done:
            next_candidates = self.candidates(next_state)
        return Transition(
            state=state.snapshot() if hasattr(state, "snapshot") else state,
            action=action,
            reward=float(reward),
            next_state=next_state.snapshot() if hasattr(next_state, "snapshot") else next_state,
            done=done,
            next_candidates=tuple(next_candidates.indices) if next_candidates else (),
        )

    def train_step(self, rng):
        return train_step(self.buffer, self.learner, self.config, rng, self.encoder)

    def policy(self, epsilon: float = 0.0):
        """Policy callable (state, rng) -> Action with a frozen copy of the online network."""
        params = self.learner.online.copy()

        def act(state, rng):
            return self.act(state, rng, epsilon=epsilon, params=params)[0]

        return act

    def checkpoint_meta(self) -> dict:
        return {
            "kind": self.kind,
            "encoding": self.config.encoding.value,
            "agent": self.config.to_dict(),
            "filter": self.candidate_filter.to_dict(),
        }

    def save(self, path, epoch: int, with_replay: bool = True, **meta):
        save_checkpoint(
            path,
            self.learner,
            {**self.checkpoint_meta(), "epoch": epoch, **meta},
            replay=self.buffer if with_replay else None,
        )


class FlatDqnAgent(CvdAgent):
    """One network over the whole cluster with an output per action; no filter."""

    kind = "flat_dqn"

    def __init__(self, config: AgentConfig, n_pms: int, learner=None):
        self.config = replace(config, encoding=Encoding.FLAT)
        self.encoder = FlatEncoder(n_pms)
        self.candidate_filter = CandidateFilter(k=config.k, enabled=False)
        if learner is None:
            sizes = layer_sizes(self.encoder.width, config.hidden, self.encoder.n_outputs)
            learner = Learner.create(init_mlp(sizes, _init_rng(config.seed)), lr=config.lr)
        self.learner = learner
        self.buffer = ReplayBuffer(config.buffer_capacity)

    @property
    def n_pms(self) -> int:
        return self.encoder.n_pms

    def act(self, state, rng, epsilon=None, params=None, candidates=None) -> tuple[Action, CandidateSet]:
        if candidates is None:
            candidates = self.candidates(state)
        epsilon = self.config.epsilon if epsilon is None else epsilon
        params = self.learner.online if params is None else params
        if epsilon and rng.random() < epsilon:
            actions = list(candidates)
            return actions[int(rng.integers(len(actions)))], candidates
        return flat_dqn_policy(state, params, self.encoder), candidates

    def make_transition(self, state, action, reward, next_state, done, next_candidates=None) -> Transition:
        # Targets recompute the next state's feasibility mask
        return Transition(
            state=state.snapshot() if hasattr(state, "snapshot") else state,
            action=action,
            reward=float(reward),
            next_state=next_state.snapshot() if hasattr(next_state, "snapshot") else next_state,
            done=done,
        )

    def train_step(self, rng):
        return flat_train_step(self.buffer, self.learner, self.config, rng, self.encoder)

    def checkpoint_meta(self) -> dict:
        return {**super().checkpoint_meta(), "n_pms": self.n_pms}


def load_agent(path, with_replay: bool = False):
    """
    Rebuild an agent from a checkpoint.

    Raises:
        MissingCheckpoint: no checkpoint at path
        ShapeMismatch: stored network does not match its recorded configuration
    """
    checkpoint = load_checkpoint(path)
    meta = checkpoint.meta
    config = AgentConfig.from_dict(meta["agent"])
    if meta.get("kind") == FlatDqnAgent.kind:
        n_pms = int(meta["n_pms"])
        expected = layer_sizes(4 * n_pms + 3, config.hidden, 2 * n_pms)
        agent = FlatDqnAgent(config, n_pms, learner=checkpoint.learner)
    else:
        candidate_filter = CandidateFilter.from_dict(meta.get("filter", {"k": config.k}))
        expected = layer_sizes(get_encoder(config.encoding).width, config.hidden)
        agent = CvdAgent(config, candidate_filter, learner=checkpoint.learner)
    if checkpoint.learner.sizes != expected:
        raise ShapeMismatch(
            f"Checkpoint {path} network {checkpoint.learner.sizes} does not match its config {expected}"
        )
    if with_replay:
        replay = load_replay(path)
        if replay is not None:
            agent.buffer = replay
    agent.epoch = checkpoint.epoch
    return agent
