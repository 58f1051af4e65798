"""
Training loop.

Each epoch samples `episodes_per_epoch` episodes in a thread pool, every
worker acting on the same frozen copy of the online network with its own
random stream. Transitions enter the replay buffer in episode order once
sampling is done, then the trainer runs ceil(steps / update_every) updates.
All random streams derive from (seed, epoch), so a run resumed from a
checkpoint follows the same trajectory as an uninterrupted one.
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from simulation.env import Episode, prepare_episode
from traces.utils import Trace, default_catalog, generate_trace

logger = logging.getLogger(__name__)

TRAINING_LOG_FIELDS = (
    "epoch",
    "mean_return",
    "scheduled_length",
    "loss",
    "epsilon",
    "buffer_size",
    "mean_candidates",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


@dataclass
class EpisodeSample:
    transitions: list = field(default_factory=list)
    total_reward: float = 0.0
    scheduled_length: int = 0
    candidate_counts: list[int] = field(default_factory=list)


@dataclass
class EpochStats:
    epoch: int
    mean_return: float
    scheduled_length: float
    loss: float | None
    epsilon: float
    buffer_size: int
    mean_candidates: float

    def row(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in TRAINING_LOG_FIELDS]


class TraceSource:
    """Training traces: one fixed trace, or a fresh synthetic trace per episode."""

    def __init__(
        self,
        trace: Trace | None = None,
        catalog=None,
        length: int = 1000,
        seed: int = 0,
        arrival_rate: float = 1.0,
    ):
        self.trace = trace
        self.catalog = catalog or default_catalog()
        self.length = length
        self.seed = seed
        self.arrival_rate = arrival_rate

    def __call__(self, epoch: int, episode: int) -> Trace:
        if self.trace is not None:
            return self.trace
        seed = int(np.random.SeedSequence([self.seed, epoch, episode]).generate_state(1)[0])
        return generate_trace(self.catalog, self.length, seed, arrival_rate=self.arrival_rate)


def sample_episode(agent, params, scenario, trace: Trace, rng, epsilon: float) -> EpisodeSample:
    """Play one warm-started episode with frozen `params`, recording transitions."""
    state, rest = prepare_episode(scenario, trace)
    episode = Episode(scenario, rest, state=state, reward=agent.config.reward)
    sample = EpisodeSample()
    candidates = None
    while not episode.done:
        state = episode.state
        action, candidates = agent.act(
            state, rng, epsilon=epsilon, params=params, candidates=candidates
        )
        sample.candidate_counts.append(len(candidates))
        reward, done = episode.step(action)
        candidates = None if done else agent.candidates(episode.state)
        sample.transitions.append(
            agent.make_transition(state, action, reward, episode.state, done, candidates)
        )
        sample.total_reward += reward
    sample.scheduled_length = episode.scheduled_length
    return sample


class Trainer:
    def __init__(self, agent, scenario, traces: TraceSource, out_dir=None, start_epoch: int = 0):
        self.agent = agent
        self.scenario = scenario
        self.traces = traces
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.epoch = start_epoch

    def run_epoch(self, epoch: int, pool: ThreadPoolExecutor) -> EpochStats:
        agent = self.agent
        cfg = agent.config
        streams = np.random.SeedSequence([cfg.seed, epoch]).spawn(cfg.episodes_per_epoch + 1)
        params = agent.learner.online.copy()

        futures = [
            pool.submit(
                sample_episode,
                agent,
                params,
                self.scenario,
                self.traces(epoch, j),
                np.random.default_rng(streams[j]),
                cfg.epsilon,
            )
            for j in range(cfg.episodes_per_epoch)
        ]
        samples = [future.result() for future in futures]
        for sample in samples:
            agent.buffer.extend(sample.transitions)

        steps = sum(len(sample.transitions) for sample in samples)
        train_rng = np.random.default_rng(streams[-1])
        losses = []
        for _ in range(math.ceil(steps / cfg.update_every)):
            loss = agent.train_step(train_rng)
            if loss is not None:
                losses.append(loss)

        counts = [count for sample in samples for count in sample.candidate_counts]
        return EpochStats(
            epoch=epoch,
            mean_return=float(np.mean([s.total_reward for s in samples])),
            scheduled_length=float(np.mean([s.scheduled_length for s in samples])),
            loss=float(np.mean(losses)) if losses else None,
            epsilon=float(cfg.epsilon),
            buffer_size=len(agent.buffer),
            mean_candidates=float(np.mean(counts)) if counts else 0.0,
        )

    def run(self, epochs: int, checkpoint_meta: dict | None = None) -> list[EpochStats]:
        """
        Train for `epochs` more epochs.

        With an output directory, writes training_log.csv (one row per epoch),
        checkpoints/epoch_XXXXX.npz every checkpoint_every epochs and a final
        checkpoint.npz.
        """
        cfg = self.agent.config
        checkpoint_meta = checkpoint_meta or {}
        history = []
        log_file = writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            log_file = (self.out_dir / "training_log.csv").open("w", newline="", encoding="utf-8")
            writer = csv.writer(log_file, lineterminator="\n")
            writer.writerow(TRAINING_LOG_FIELDS)

        try:
            with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
                for _ in range(epochs):
                    self.epoch += 1
                    stats = self.run_epoch(self.epoch, pool)
                    history.append(stats)
                    logger.info(
                        f"Epoch {stats.epoch}: length {stats.scheduled_length:.1f}, "
                        f"return {stats.mean_return:.3f}, loss {_fmt(stats.loss) or '-'}, "
                        f"buffer {stats.buffer_size}"
                    )
                    if writer is not None:
                        writer.writerow(stats.row())
                        log_file.flush()
                        if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                            path = self.out_dir / "checkpoints" / f"epoch_{self.epoch:05d}.npz"
                            self.agent.save(path, self.epoch, **checkpoint_meta)
        finally:
            if log_file is not None:
                log_file.close()

        if self.out_dir is not None:
            self.agent.save(self.out_dir / "checkpoint.npz", self.epoch, **checkpoint_meta)
        self.agent.epoch = self.epoch
        return history
