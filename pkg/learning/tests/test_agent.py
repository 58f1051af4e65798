import pickle

import numpy as np
from django.test import SimpleTestCase

from cluster.core import (
    Action,
    ClusterState,
    NumaMode,
    NumaResources,
    VmRequest,
    allocate,
    feasible,
    feasible_action_set,
)
from cluster.exceptions import InfeasibleAllocation, NoFeasibleAction
from cluster.tests.factories import random_state
from learning.agent import (
    AgentConfig,
    CvdAgent,
    FlatDqnAgent,
    ReplayBuffer,
    Transition,
    compute_targets,
    evaluate_candidates,
    flat_dqn_policy,
    naive_cluster_values,
    pm_benefits,
    select_action,
    train_step,
)
from learning.exceptions import ShapeMismatch
from learning.features import FlatEncoder, LookAheadEncoder, PreStateEncoder, pm_features
from learning.network import Learner, MlpParams, init_mlp, layer_sizes, q_values
from schedulers.heuristics import CandidateFilter, CandidateSet, best_fit, best_fit_ranking, top_k_filter

NUMA = NumaResources(8, 16)


def request(cpu, mem=None, numa_mode=NumaMode.SINGLE, vm_id="req"):
    return VmRequest(
        vm_id=vm_id,
        resources=NumaResources(cpu, 2 * cpu if mem is None else mem),
        numa_mode=numa_mode,
        duration=5,
        price_rate=0.1,
    )


def state_from(numas, pending):
    remaining = np.array(numas, dtype=np.int64)
    capacity = np.tile(np.array(NUMA.as_tuple()), (len(numas), 2, 1))
    return ClusterState.from_arrays(remaining, capacity, pending=pending)


def candidate_set(*indices):
    return CandidateSet(actions=tuple(Action(i) for i in indices))


def favour_low_cpu0():
    """Single-unit net computing Q(f) = relu(0.5 - cpu0)."""
    params = MlpParams.zeros([4, 1, 1, 1, 1, 1, 1])
    params.weights[0][0, 0] = -1.0
    params.biases[0][0] = 0.5
    for w in params.weights[1:]:
        w[0, 0] = 1.0
    return params


class EncoderTests(SimpleTestCase):
    def test_look_ahead_rows_are_post_allocation_pms(self):
        state = state_from([[[8, 16], [6, 10]], [[4, 4], [8, 16]]], request(2))
        encoder = LookAheadEncoder()
        np.testing.assert_allclose(encoder.base(state)[1], [0.5, 0.25, 1.0, 1.0])
        rows = encoder.candidates(state, [1, 2])
        np.testing.assert_allclose(rows[0], [1.0, 1.0, 0.5, 6 / 16])
        np.testing.assert_allclose(rows[1], [0.25, 0.0, 1.0, 1.0])

    def test_look_ahead_candidate_equals_allocated_state(self):
        rng = np.random.default_rng(1)
        encoder = LookAheadEncoder()
        for _ in range(100):
            state = random_state(rng, n_pms=6)
            for action in feasible_action_set(state):
                after = allocate(state, action)
                np.testing.assert_array_equal(
                    encoder.candidates(state, [action.index])[0],
                    pm_features(after.remaining, after.capacity)[action.pm],
                )

    def test_pre_state_encoding(self):
        state = state_from([[[8, 16], [8, 16]], [[2, 4], [8, 16]]], request(4, 8, NumaMode.DOUBLE))
        encoder = PreStateEncoder()
        self.assertEqual(encoder.width, 9)
        base = encoder.base(state)
        self.assertEqual(base.shape, (2, 9))
        np.testing.assert_allclose(base[1], [0.25, 0.25, 1, 1, 0.5, 0.5, 0, 0, 0])
        rows = encoder.candidates(state, [0])
        np.testing.assert_allclose(rows[0], [1, 1, 1, 1, 0.5, 0.5, 0, 0, 1])

    def test_pre_state_single_slots(self):
        state = state_from([[[8, 16], [8, 16]]], request(2))
        rows = PreStateEncoder().candidates(state, [0, 1])
        np.testing.assert_array_equal(rows[:, 6:], [[1, 0, 0], [0, 1, 0]])

    def test_flat_encoding_width(self):
        state = state_from([[[8, 16], [8, 16]]] * 3, request(2))
        encoder = FlatEncoder(3)
        self.assertEqual(encoder.width, 15)
        self.assertEqual(encoder.n_outputs, 6)
        x = encoder.encode(state)
        self.assertEqual(x.shape, (15,))
        np.testing.assert_allclose(x[-3:], [0.25, 0.25, 0.0])
        with self.assertRaises(ShapeMismatch):
            FlatEncoder(4).encode(state)


class EvaluateCandidatesTests(SimpleTestCase):
    def test_zero_net_values_are_zero(self):
        state = state_from([[[8, 16], [8, 16]]] * 3, request(2))
        params = MlpParams.zeros(layer_sizes(4, hidden=8))
        values = evaluate_candidates(state, top_k_filter(state), params)
        self.assertEqual([v for _, v in values], [0.0] * 5)

    def test_single_pm_values_differ_by_post_state_q(self):
        params = init_mlp(layer_sizes(4, hidden=16), np.random.default_rng(2))
        state = state_from([[[6, 12], [3, 16]]], request(2))
        (a0, v0), (a1, v1) = evaluate_candidates(state, candidate_set(0, 1), params)
        rows = LookAheadEncoder().candidates(state, [0, 1])
        q = q_values(params, rows)
        self.assertEqual((a0, a1), (Action(0), Action(1)))
        self.assertAlmostEqual(v0 - v1, q[0] - q[1], delta=1e-12)

    def test_incremental_matches_naive_sum_on_large_clusters(self):
        """Test incremental scoring against the full per-PM sum on 1000 50-PM states."""
        rng = np.random.default_rng(3)
        params = init_mlp(layer_sizes(4, hidden=32), rng)
        checked = 0
        while checked < 1000:
            state = random_state(rng, n_pms=50)
            if not feasible_action_set(state):
                continue
            candidates = top_k_filter(state)
            incremental = np.array([v for _, v in evaluate_candidates(state, candidates, params)])
            np.testing.assert_allclose(
                incremental, naive_cluster_values(state, candidates, params), rtol=0, atol=1e-9
            )
            checked += 1

    def test_naive_sum_matches_allocated_cluster(self):
        rng = np.random.default_rng(4)
        params = init_mlp(layer_sizes(4, hidden=16), rng)
        for _ in range(50):
            state = random_state(rng, n_pms=8)
            actions = feasible_action_set(state)
            if not actions:
                continue
            naive = naive_cluster_values(state, actions, params)
            for action, value in zip(actions, naive):
                after = allocate(state, action)
                full = q_values(params, pm_features(after.remaining, after.capacity)).sum()
                self.assertAlmostEqual(value, full, delta=1e-9)

    def test_infeasible_candidate_raises(self):
        state = state_from([[[8, 16], [1, 16]]], request(2))
        params = MlpParams.zeros(layer_sizes(4, hidden=4))
        with self.assertRaises(InfeasibleAllocation):
            evaluate_candidates(state, candidate_set(0, 1), params)


class SelectActionTests(SimpleTestCase):
    def setUp(self):
        self.state = state_from([[[8, 16], [8, 16]], [[2, 16], [8, 16]]], request(2))

    def test_zero_net_picks_lowest_index(self):
        params = MlpParams.zeros(layer_sizes(4, hidden=8))
        candidates = candidate_set(3, 2, 0, 1)
        rng = np.random.default_rng(0)
        self.assertEqual(select_action(self.state, candidates, params, 0.0, rng), Action(0))

    def test_hand_built_net_prefers_pm1(self):
        candidates = candidate_set(0, 1, 2, 3)
        rng = np.random.default_rng(0)
        self.assertEqual(select_action(self.state, candidates, favour_low_cpu0(), 0.0, rng), Action(2))
        benefits = pm_benefits(self.state, candidates, favour_low_cpu0())
        np.testing.assert_allclose(benefits, [0.0, 0.0, 0.25, 0.0])

    def test_full_exploration_is_uniform(self):
        params = MlpParams.zeros(layer_sizes(4, hidden=4))
        candidates = candidate_set(0, 1, 2, 3)
        rng = np.random.default_rng(42)
        draws = 10_000
        counts = {i: 0 for i in range(4)}
        for _ in range(draws):
            counts[select_action(self.state, candidates, params, 1.0, rng).index] += 1
        sigma = np.sqrt(draws * 0.25 * 0.75)
        for count in counts.values():
            self.assertLess(abs(count - draws / 4), 3 * sigma)

    def test_empty_candidates_raise(self):
        params = MlpParams.zeros(layer_sizes(4, hidden=4))
        with self.assertRaises(NoFeasibleAction):
            select_action(self.state, candidate_set(), params, 0.0, np.random.default_rng(0))

    def test_best_fit_is_realizable(self):
        """Test that Q = sum of squared normalized cpu makes the greedy choice Best-Fit."""

        def best_fit_value(features):
            return features[:, 0] ** 2 + features[:, 2] ** 2

        rng = np.random.default_rng(7)
        unfiltered = CandidateFilter(enabled=False)
        checked = 0
        while checked < 1000:
            state = random_state(rng, n_pms=8)
            ranking = best_fit_ranking(state)
            if not ranking:
                continue
            if len(ranking) > 1:
                remaining = [self._cpu_after(state, a) for a in ranking[:2]]
                if remaining[0] == remaining[1]:
                    continue
            chosen = select_action(state, unfiltered(state), best_fit_value, 0.0, rng)
            self.assertEqual(chosen, best_fit(state))
            checked += 1

    @staticmethod
    def _cpu_after(state, action):
        cpu = state.pending.resources.cpu
        if state.pending.is_double:
            return int(state.remaining[action.pm, :, 0].sum()) - cpu
        return int(state.remaining[action.pm, action.numa_slot, 0]) - cpu

    def test_greedy_choice_is_in_filter(self):
        rng = np.random.default_rng(8)
        params = init_mlp(layer_sizes(4, hidden=16), rng)
        for _ in range(200):
            state = random_state(rng, n_pms=10)
            if not feasible_action_set(state):
                continue
            candidates = top_k_filter(state)
            chosen = select_action(state, candidates, params, 0.0, rng)
            self.assertIn(chosen, candidates)
            values = dict(evaluate_candidates(state, candidates, params))
            self.assertAlmostEqual(values[chosen], max(values.values()), delta=1e-9)


class ComputeTargetsTests(SimpleTestCase):
    def setUp(self):
        self.params = init_mlp(layer_sizes(4, hidden=8), np.random.default_rng(0))
        self.state = state_from([[[8, 16], [8, 16]]], request(2))

    def transition(self, reward, done, next_state=None, next_candidates=()):
        next_state = next_state or self.state
        return Transition(
            state=self.state.snapshot(),
            action=Action(0),
            reward=reward,
            next_state=next_state.snapshot(),
            done=done,
            next_candidates=next_candidates,
        )

    def test_terminal_target_is_reward(self):
        targets = compute_targets([self.transition(1.0, True)], self.params, self.params, 0.75)
        self.assertEqual(targets.tolist(), [1.0])

    def test_zero_gamma_gives_rewards(self):
        batch = [self.transition(1.0, False, next_candidates=(0, 1)), self.transition(0.5, False, next_candidates=(1,))]
        targets = compute_targets(batch, self.params, self.params, 0.0)
        self.assertEqual(targets.tolist(), [1.0, 0.5])

    def test_single_next_candidate(self):
        next_state = state_from([[[8, 16], [1, 16]]], request(2))
        transition = self.transition(1.0, False, next_state=next_state, next_candidates=(0,))
        target = init_mlp(layer_sizes(4, hidden=8), np.random.default_rng(1))
        [(_, value)] = evaluate_candidates(next_state, candidate_set(0), target)
        targets = compute_targets([transition], self.params, target, 0.75)
        self.assertAlmostEqual(targets[0], 1.0 + 0.75 * value, delta=1e-6)

    def test_online_selects_and_target_evaluates(self):
        transition = self.transition(1.0, False, next_candidates=(0, 1))

        def online(features):
            return features[:, 2]

        def target(features):
            return features[:, 0]

        # Online prefers numa 0 (keeps cpu1 free); target values that at cpu0 = 0.75
        targets = compute_targets([transition], online, target, 0.5)
        self.assertAlmostEqual(targets[0], 1.0 + 0.5 * 0.75, delta=1e-6)


class ReplayBufferTests(SimpleTestCase):
    def make(self, i):
        return Transition(
            state=None, action=Action(i), reward=float(i), next_state=None, done=True
        )

    def test_evicts_oldest_first(self):
        buffer = ReplayBuffer(capacity=3)
        buffer.extend(self.make(i) for i in range(5))
        self.assertEqual(len(buffer), 3)
        rewards = sorted(t.reward for t in buffer.sample(200, np.random.default_rng(0)))
        self.assertEqual(set(rewards), {2.0, 3.0, 4.0})

    def test_sample_with_replacement(self):
        buffer = ReplayBuffer(capacity=10)
        buffer.append(self.make(0))
        self.assertEqual(len(buffer.sample(5, np.random.default_rng(0))), 5)

    def test_pickles(self):
        buffer = ReplayBuffer(capacity=4)
        buffer.extend(self.make(i) for i in range(6))
        restored = pickle.loads(pickle.dumps(buffer))
        self.assertEqual(len(restored), 4)
        restored.append(self.make(9))
        self.assertEqual(restored._position, 3)


class TrainStepTests(SimpleTestCase):
    def setUp(self):
        self.state = state_from([[[8, 16], [8, 16]], [[4, 8], [8, 16]]], request(2))
        after = allocate(self.state, Action(2)).with_pending(None)
        self.transition = Transition(
            state=self.state.snapshot(),
            action=Action(2),
            reward=1.0,
            next_state=after.snapshot(),
            done=True,
        )

    def learner(self, hidden=16, lr=1e-3):
        return Learner.create(init_mlp(layer_sizes(4, hidden), np.random.default_rng(5)), lr=lr)

    def test_small_buffer_is_a_no_op(self):
        cfg = AgentConfig(batch_size=4)
        learner = self.learner()
        online, target = learner.online, learner.target
        buffer = ReplayBuffer()
        buffer.append(self.transition)
        self.assertIsNone(train_step(buffer, learner, cfg, np.random.default_rng(0)))
        self.assertIs(learner.online, online)
        self.assertIs(learner.target, target)
        self.assertEqual(learner.opt.step, 0)

    def test_zero_tau_freezes_target(self):
        cfg = AgentConfig(batch_size=1, tau=0.0)
        learner = self.learner()
        frozen = learner.target.copy()
        buffer = ReplayBuffer()
        buffer.append(self.transition)
        rng = np.random.default_rng(0)
        for _ in range(5):
            train_step(buffer, learner, cfg, rng)
        for a, b in zip(frozen.arrays(), learner.target.arrays()):
            np.testing.assert_array_equal(a, b)
        self.assertEqual(learner.opt.step, 5)

    def test_overfits_one_transition(self):
        cfg = AgentConfig(batch_size=1, lr=1e-3)
        learner = self.learner()
        buffer = ReplayBuffer()
        buffer.append(self.transition)
        rng = np.random.default_rng(0)
        losses = [train_step(buffer, learner, cfg, rng) for _ in range(100)]
        self.assertLess(losses[-1], 0.01 * losses[0])
        self.assertGreater(min(losses[:10]), max(losses[-10:]))


class FlatPolicyTests(SimpleTestCase):
    def test_equal_outputs_pick_lowest_feasible(self):
        state = state_from([[[1, 16], [1, 16]], [[8, 16], [8, 16]]], request(2))
        params = MlpParams.zeros(layer_sizes(11, hidden=4, n_outputs=4))
        self.assertEqual(flat_dqn_policy(state, params), Action(2))

    def test_single_feasible_action(self):
        state = state_from([[[1, 16], [1, 16]], [[1, 16], [8, 16]]], request(2))
        params = init_mlp(layer_sizes(11, hidden=8, n_outputs=4), np.random.default_rng(0))
        self.assertEqual(flat_dqn_policy(state, params), Action(3))

    def test_never_picks_infeasible(self):
        rng = np.random.default_rng(9)
        params = init_mlp(layer_sizes(4 * 6 + 3, hidden=16, n_outputs=12), rng)
        checked = 0
        while checked < 1000:
            state = random_state(rng, n_pms=6)
            if not feasible_action_set(state):
                with self.assertRaises(NoFeasibleAction):
                    flat_dqn_policy(state, params)
                continue
            self.assertTrue(feasible(state, flat_dqn_policy(state, params)))
            checked += 1

    def test_double_requests_use_canonical_index(self):
        rng = np.random.default_rng(10)
        params = init_mlp(layer_sizes(4 * 4 + 3, hidden=8, n_outputs=8), rng)
        for _ in range(100):
            state = random_state(rng, n_pms=4, double_prob=1.0)
            if feasible_action_set(state):
                self.assertEqual(flat_dqn_policy(state, params).index % 2, 0)


class AgentTests(SimpleTestCase):
    def test_cvd_agent_network_shape(self):
        agent = CvdAgent(AgentConfig(hidden=16))
        self.assertEqual(agent.learner.sizes, [4, 16, 16, 16, 16, 16, 1])
        pre_state = CvdAgent(AgentConfig(hidden=16, encoding="pre_state"))
        self.assertEqual(pre_state.learner.sizes[0], 9)

    def test_flat_agent_network_shape(self):
        agent = FlatDqnAgent(AgentConfig(hidden=16), n_pms=5)
        self.assertEqual(agent.learner.sizes, [23, 16, 16, 16, 16, 16, 10])

    def test_same_seed_same_initial_params(self):
        a = CvdAgent(AgentConfig(hidden=8, seed=3))
        b = CvdAgent(AgentConfig(hidden=8, seed=3))
        for x, y in zip(a.learner.online.arrays(), b.learner.online.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_greedy_policy_acts_within_filter(self):
        agent = CvdAgent(AgentConfig(hidden=8))
        policy = agent.policy()
        rng = np.random.default_rng(0)
        for _ in range(20):
            state = random_state(rng, n_pms=7)
            if feasible_action_set(state):
                self.assertIn(policy(state, rng), agent.candidates(state))

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            AgentConfig(gamma=0.0)
        with self.assertRaises(ValueError):
            AgentConfig(epsilon=1.5)
        self.assertEqual(AgentConfig.from_dict(AgentConfig(k=7).to_dict()), AgentConfig(k=7))
