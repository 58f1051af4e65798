"""Named scheduling policies: callables (state, rng) -> Action."""

import logging

from cluster.core import feasible_action_set
from cluster.exceptions import NoFeasibleAction
from learning.agent import FlatDqnAgent, load_agent
from learning.exceptions import MissingCheckpoint
from schedulers.heuristics import DEFAULT_SURROGATE_WEIGHTS, best_fit, first_fit, internal_surrogate
from simulation.exceptions import UnknownPolicy

logger = logging.getLogger(__name__)

HEURISTIC_POLICIES = ("first_fit", "best_fit", "internal", "random")
LEARNED_POLICIES = ("cvd_rl", "flat_dqn")
POLICY_NAMES = HEURISTIC_POLICIES + LEARNED_POLICIES


def first_fit_policy(state, rng):
    return first_fit(state)


def best_fit_policy(state, rng):
    return best_fit(state)


def internal_policy(state, rng):
    return internal_surrogate(state, DEFAULT_SURROGATE_WEIGHTS)[0]


def random_policy(state, rng):
    """Uniform choice over the feasible actions."""
    actions = feasible_action_set(state)
    if not actions:
        raise NoFeasibleAction("No PM can host the pending request")
    return actions[int(rng.integers(len(actions)))]


_HEURISTICS = {
    "first_fit": first_fit_policy,
    "best_fit": best_fit_policy,
    "internal": internal_policy,
    "random": random_policy,
}


def is_learned(name: str) -> bool:
    return name in LEARNED_POLICIES


def build_policy(name: str, checkpoint=None):
    """
    Resolve a policy by name. Learned policies act greedily with the network
    stored in `checkpoint`; the checkpoint file is only read.

    Raises:
        UnknownPolicy: name is not registered
        MissingCheckpoint: a learned policy without a usable checkpoint
    """
    if name in _HEURISTICS:
        return _HEURISTICS[name]
    if name not in LEARNED_POLICIES:
        raise UnknownPolicy(f"Unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    if checkpoint is None:
        raise MissingCheckpoint(f"Policy {name} needs a checkpoint")

    agent = load_agent(checkpoint)
    if (name == "flat_dqn") != isinstance(agent, FlatDqnAgent):
        raise MissingCheckpoint(f"Checkpoint {checkpoint} holds a {agent.kind} network, not {name}")
    logger.info(f"Loaded {agent.kind} policy from {checkpoint} (epoch {agent.epoch})")
    return agent.policy(epsilon=0.0)
