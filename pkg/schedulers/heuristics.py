"""
Heuristic schedulers and the top-k candidate filter.

All rankings consider feasible actions only; double-NUMA requests rank PMs
through their canonical (even) action index, single-NUMA requests rank NUMA
slots. Ties always go to the lowest action index.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from cluster.core import Action, candidate_post_states, feasible_action_set
from cluster.exceptions import NoFeasibleAction

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_SURROGATE_WEIGHTS = (1.0, 0.5, 0.25)

# (Best-Fit share, Internal share) for the k values studied in the ablations
NAMED_SPLITS = {3: (2, 1), 5: (2, 3), 7: (4, 3), 10: (6, 4)}


@dataclass(frozen=True)
class ScoreFunction:
    """A named rule scoring feasible actions; higher scores are preferred."""

    name: str
    score: Callable

    def rank(self, state) -> list[Action]:
        if state.pending is None or state.n_pms == 0:
            return []
        indices, post = candidate_post_states(state)
        feasible = (post >= 0).all(axis=(1, 2))
        indices, post = indices[feasible], post[feasible]
        if not len(indices):
            return []
        scores = self.score(state, indices, post)
        order = np.lexsort((indices, -scores))
        return [Action(int(indices[i])) for i in order]


def _best_fit_score(state, indices, post):
    # Remaining CPU of the target NUMA (single) or PM (double), negated
    if state.pending.is_double:
        return -post[:, :, 0].sum(axis=1).astype(float)
    rows = np.arange(len(indices))
    return -post[rows, indices % 2, 0].astype(float)


def surrogate_score(weights=DEFAULT_SURROGATE_WEIGHTS):
    """
    Score of the internal-scheduler surrogate.

    Weighted sum of the CPU and memory left on the target after placement and
    the CPU imbalance between the PM's two NUMA nodes, all normalized by
    capacity. Lower sums are better, so the score is the negated sum.
    """
    w_cpu, w_mem, w_balance = weights

    def score(state, indices, post):
        capacity = state.capacity[indices // 2].astype(float)
        if state.pending.is_double:
            cpu_left = post[:, :, 0].sum(axis=1) / capacity[:, :, 0].sum(axis=1)
            mem_left = post[:, :, 1].sum(axis=1) / capacity[:, :, 1].sum(axis=1)
        else:
            rows = np.arange(len(indices))
            slots = indices % 2
            cpu_left = post[rows, slots, 0] / capacity[rows, slots, 0]
            mem_left = post[rows, slots, 1] / capacity[rows, slots, 1]
        imbalance = np.abs(post[:, 0, 0] - post[:, 1, 0]) / capacity[:, :, 0].max(axis=1)
        return -(w_cpu * cpu_left + w_mem * mem_left + w_balance * imbalance)

    return score


BEST_FIT = ScoreFunction("best_fit", _best_fit_score)


def first_fit(state) -> Action:
    """Lowest-index feasible action."""
    actions = feasible_action_set(state)
    if not actions:
        raise NoFeasibleAction("No PM can host the pending request")
    return actions[0]


def best_fit_ranking(state) -> list[Action]:
    return BEST_FIT.rank(state)


def best_fit(state) -> Action:
    """Feasible action leaving the least CPU on its target NUMA or PM."""
    ranking = best_fit_ranking(state)
    if not ranking:
        raise NoFeasibleAction("No PM can host the pending request")
    return ranking[0]


def internal_surrogate(state, weights=DEFAULT_SURROGATE_WEIGHTS) -> list[Action]:
    """Feasible actions ranked by the surrogate score, best first."""
    ranking = ScoreFunction("internal", surrogate_score(weights)).rank(state)
    if not ranking:
        raise NoFeasibleAction("No PM can host the pending request")
    return ranking


@dataclass(frozen=True)
class CandidateSet:
    actions: tuple[Action, ...]

    def __len__(self):
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __contains__(self, action):
        return action in self.actions

    @property
    def indices(self) -> list[int]:
        return [action.index for action in self.actions]


def resolve_split(k: int, split=None) -> tuple[int, int]:
    """(n_bf, n_is) for a filter of size k."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if split is not None:
        n_bf, n_is = (int(n) for n in split)
        if n_bf < 0 or n_is < 0 or n_bf + n_is > k:
            raise ValueError(f"split {split} does not fit k={k}")
        return n_bf, n_is
    if k in NAMED_SPLITS:
        return NAMED_SPLITS[k]
    n_bf = math.ceil(k / 2)
    return n_bf, k - n_bf


def top_k_filter(state, k=DEFAULT_K, split=None, weights=DEFAULT_SURROGATE_WEIGHTS):
    """
    Build the candidate set: Best-Fit's top n_bf and the surrogate's top n_is,
    deduplicated, then backfilled from the surrogate's ranking (and then
    Best-Fit's) until k candidates or the feasible set is exhausted.
    """
    n_bf, n_is = resolve_split(k, split)
    bf_ranking = best_fit_ranking(state)
    if not bf_ranking:
        raise NoFeasibleAction("No PM can host the pending request")
    is_ranking = internal_surrogate(state, weights)

    chosen = []
    seen = set()

    def take(ranking, limit):
        for action in ranking[:limit]:
            if len(chosen) >= k:
                return
            if action not in seen:
                seen.add(action)
                chosen.append(action)

    take(bf_ranking, n_bf)
    take(is_ranking, n_is)
    merged = len(chosen)
    take(is_ranking, len(is_ranking))
    take(bf_ranking, len(bf_ranking))

    logger.debug(
        f"Top-{k} filter: {merged} after dedup, {len(chosen)} after backfill "
        f"({len(bf_ranking)} feasible)"
    )
    return CandidateSet(actions=tuple(chosen))


@dataclass(frozen=True)
class CandidateFilter:
    """Configured filter: top-k with a split, or the full feasible set."""

    k: int = DEFAULT_K
    split: tuple[int, int] | None = None
    weights: tuple[float, float, float] = DEFAULT_SURROGATE_WEIGHTS
    enabled: bool = True

    def __call__(self, state) -> CandidateSet:
        if not self.enabled:
            actions = feasible_action_set(state)
            if not actions:
                raise NoFeasibleAction("No PM can host the pending request")
            return CandidateSet(actions=tuple(actions))
        return top_k_filter(state, self.k, self.split, self.weights)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "split": list(self.split) if self.split is not None else None,
            "weights": list(self.weights),
            "enabled": self.enabled,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateFilter":
        split = data.get("split")
        return cls(
            k=int(data.get("k", DEFAULT_K)),
            split=tuple(split) if split is not None else None,
            weights=tuple(data.get("weights", DEFAULT_SURROGATE_WEIGHTS)),
            enabled=bool(data.get("enabled", True)),
        )
