import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from safebandit.core import ContextVector
from safebandit.policies import (
    EpsilonGreedyPolicy,
    LinearRanker,
    LinUcbState,
    SoftmaxLinearPolicy,
    ThompsonState,
    linucb_select,
    linucb_update,
    policy_from_json,
    policy_to_json,
    rank_candidates,
    sample_action,
    thompson_select,
    thompson_update,
)


class TestSoftmaxLinearPolicy:
    def test_zero_weights_is_uniform(self):
        policy = SoftmaxLinearPolicy(np.zeros((10, 4)))
        probs = policy.action_probabilities(np.ones(4))
        assert np.allclose(probs, 0.1, atol=1e-12)

    def test_unit_logit_distribution(self):
        x = np.array([2.0, 1.0])
        weights = np.zeros((3, 2))
        weights[0] = x / float(x @ x)  # logits (1, 0, 0)
        policy = SoftmaxLinearPolicy(weights)
        probs = policy.action_probabilities(x)
        e = math.e
        expected = np.array([e / (e + 2), 1 / (e + 2), 1 / (e + 2)])
        assert np.allclose(probs, expected, atol=1e-12)
        assert np.allclose(probs, [0.5761, 0.2119, 0.2119], atol=5e-5)

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(0)
        weights = rng.standard_normal((4, 3))
        x = rng.standard_normal(3)
        shifted = weights + 2.5 * np.outer(np.ones(4), x) / float(x @ x)
        p0 = SoftmaxLinearPolicy(weights).action_probabilities(x)
        p1 = SoftmaxLinearPolicy(shifted).action_probabilities(x)
        assert np.allclose(p0, p1, atol=1e-9)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        policy = SoftmaxLinearPolicy(rng.standard_normal((5, 3)),
                                     temperature=0.7, uniform_mix=0.2)
        X = rng.standard_normal((20, 3))
        batch = policy.batch_action_probabilities(X)
        for i in range(20):
            assert np.allclose(batch[i], policy.action_probabilities(X[i]),
                               atol=1e-12)

    def test_uniform_mix_floor(self):
        policy = SoftmaxLinearPolicy(np.full((4, 2), 50.0), uniform_mix=0.2)
        probs = policy.action_probabilities(np.ones(2))
        assert probs.min() >= 0.2 / 4 - 1e-15

    def test_accepts_context_vector(self):
        policy = SoftmaxLinearPolicy(np.zeros((2, 2)))
        assert policy.probability(ContextVector(np.ones(2)), 0) == 0.5

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_probabilities_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 8))
        m = int(rng.integers(1, 6))
        policy = SoftmaxLinearPolicy(
            3.0 * rng.standard_normal((n, m)),
            temperature=float(rng.uniform(0.2, 3.0)),
            uniform_mix=float(rng.uniform(0.0, 1.0)),
        )
        probs = policy.action_probabilities(rng.standard_normal(m))
        assert abs(probs.sum() - 1.0) < 1e-9
        assert probs.min() >= 0.0


class TestEpsilonGreedyPolicy:
    def test_deterministic_when_epsilon_zero(self):
        scores = np.array([[0.0, 1.0], [2.0, 0.0], [1.0, 1.0]])
        policy = EpsilonGreedyPolicy(scores, epsilon=0.0)
        x = np.array([1.0, 0.0])
        action, propensity = sample_action(policy, x, np.random.default_rng(0))
        assert (action, propensity) == (1, 1.0)

    def test_uniform_when_epsilon_one(self):
        policy = EpsilonGreedyPolicy(np.zeros((4, 2)), epsilon=1.0)
        probs = policy.action_probabilities(np.ones(2))
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_propensity_formula(self):
        scores = np.zeros((10, 3))
        scores[7] = 1.0
        policy = EpsilonGreedyPolicy(scores, epsilon=0.1)
        probs = policy.action_probabilities(np.ones(3))
        assert abs(probs[7] - 0.91) < 1e-12
        others = np.delete(probs, 7)
        assert np.allclose(others, 0.01, atol=1e-12)

    def test_greedy_tie_break_lowest_id(self):
        policy = EpsilonGreedyPolicy(np.zeros((5, 2)), epsilon=0.0)
        assert policy.greedy_action(np.ones(2)) == 0


class TestSampleAction:
    def test_propensity_in_unit_interval(self):
        rng = np.random.default_rng(3)
        policy = SoftmaxLinearPolicy(rng.standard_normal((6, 4)))
        for _ in range(200):
            x = rng.standard_normal(4)
            action, propensity = sample_action(policy, x, rng)
            assert 0.0 < propensity <= 1.0
            assert 0 <= action < 6

    def test_propensity_equals_policy_probability(self):
        rng = np.random.default_rng(4)
        policy = SoftmaxLinearPolicy(rng.standard_normal((5, 3)))
        x = rng.standard_normal(3)
        probs = policy.action_probabilities(x)
        for _ in range(50):
            action, propensity = sample_action(policy, x, rng)
            assert abs(propensity - probs[action]) < 1e-12

    def test_empirical_frequencies_match(self):
        rng = np.random.default_rng(5)
        policy = SoftmaxLinearPolicy(rng.standard_normal((4, 2)))
        x = rng.standard_normal(2)
        probs = policy.action_probabilities(x)
        draws = 100_000
        counts = np.zeros(4)
        for _ in range(draws):
            action, _ = sample_action(policy, x, rng)
            counts[action] += 1
        freqs = counts / draws
        sigma = np.sqrt(probs * (1 - probs) / draws)
        assert np.all(np.abs(freqs - probs) <= 3 * sigma + 1e-12)


class TestLinUcb:
    def test_fresh_state_tie_breaks_to_action_zero(self):
        state = LinUcbState(4, 3, alpha=1.0)
        assert linucb_select(state, np.array([1.0, -1.0, 0.5])) == 0

    def test_repeated_rewards_dominate(self):
        state = LinUcbState(5, 3, alpha=1.0)
        x = np.array([1.0, 0.5, -0.25])
        x /= np.linalg.norm(x)
        for _ in range(100):
            linucb_update(state, x, 2, 1.0)
        assert linucb_select(state, x) == 2

    def test_alpha_zero_is_pure_greedy(self):
        rng = np.random.default_rng(6)
        state = LinUcbState(3, 2, alpha=0.0)
        for _ in range(30):
            x = rng.standard_normal(2)
            a = int(rng.integers(0, 3))
            linucb_update(state, x, a, float(rng.random()))
        x = rng.standard_normal(2)
        theta = np.array([
            np.linalg.solve(state.A[a], state.b[a]) for a in range(3)
        ])
        assert linucb_select(state, x) == int(np.argmax(theta @ x))

    def test_rank_one_update(self):
        state = LinUcbState(2, 3, alpha=1.0)
        e1 = np.array([1.0, 0.0, 0.0])
        linucb_update(state, e1, 0, 1.0)
        assert np.allclose(state.A[0], np.diag([2.0, 1.0, 1.0]))
        assert np.allclose(state.b[0], e1)
        assert np.allclose(state.A[1], np.eye(3))

    def test_zero_reward_updates_A_only(self):
        state = LinUcbState(2, 2, alpha=1.0)
        x = np.array([1.0, 2.0])
        linucb_update(state, x, 1, 0.0)
        assert np.allclose(state.b[1], 0.0)
        assert np.allclose(state.A[1], np.eye(2) + np.outer(x, x))

    def test_updates_commute_with_doubling(self):
        x = np.array([0.5, -1.5])
        twice = LinUcbState(1, 2)
        linucb_update(twice, x, 0, 0.7)
        linucb_update(twice, x, 0, 0.7)
        doubled = LinUcbState(1, 2)
        doubled.A[0] += 2.0 * np.outer(x, x)
        doubled.b[0] += 2.0 * 0.7 * x
        assert np.allclose(twice.A[0], doubled.A[0])
        assert np.allclose(twice.b[0], doubled.b[0])


class TestThompson:
    def test_single_action_always_selected(self):
        state = ThompsonState(1, 3)
        rng = np.random.default_rng(7)
        assert thompson_select(state, np.ones(3), rng) == 0

    def test_fresh_state_symmetry(self):
        n, draws = 4, 10_000
        state = ThompsonState(n, 2, nu2=1.0)
        rng = np.random.default_rng(8)
        x = np.array([1.0, 0.5])
        counts = np.zeros(n)
        for _ in range(draws):
            counts[thompson_select(state, x, rng)] += 1
        freqs = counts / draws
        sigma = math.sqrt(0.25 * 0.75 / draws)
        assert np.all(np.abs(freqs - 1 / n) <= 3 * sigma)

    def test_posterior_mean_conjugate_update(self):
        state = ThompsonState(2, 3, nu2=1.0)
        e1 = np.array([1.0, 0.0, 0.0])
        thompson_update(state, e1, 0, 1.0)
        # precision 1/nu2 + 1 = 2 along e1, so the mean lands at 1/(1+1/nu2).
        assert abs(state.posterior_mean(0)[0] - 0.5) < 1e-12

    def test_zero_context_leaves_state_unchanged(self):
        state = ThompsonState(2, 2, nu2=1.0)
        before_p = state.precision.copy()
        before_b = state.b.copy()
        thompson_update(state, np.zeros(2), 0, 1.0)
        assert np.array_equal(state.precision, before_p)
        assert np.array_equal(state.b, before_b)

    def test_update_touches_only_one_action(self):
        state = ThompsonState(3, 2, nu2=1.0)
        thompson_update(state, np.array([1.0, 2.0]), 1, 0.5)
        assert np.allclose(state.precision[0], np.eye(2))
        assert np.allclose(state.precision[2], np.eye(2))
        assert np.allclose(state.b[0], 0.0)
        assert not np.allclose(state.precision[1], np.eye(2))

    def test_small_prior_variance_acts_greedily(self):
        state = ThompsonState(3, 2, nu2=0.01)
        x = np.array([1.0, 0.0])
        for _ in range(100):
            thompson_update(state, x, 1, 1.0)
        rng = np.random.default_rng(9)
        picks = [thompson_select(state, x, rng) for _ in range(100)]
        assert picks.count(1) >= 95


class TestLinearRanker:
    def test_zero_weights_keep_input_order(self):
        ranker = LinearRanker.zeros(2)
        ranked = rank_candidates(ranker, np.ones((3, 2)))
        assert ranked.doc_ids.tolist() == [0, 1, 2]

    def test_sort_by_dot_product(self):
        ranker = LinearRanker(np.array([1.0, 0.0]))
        docs = np.array([[0.2, 9.0], [0.9, 9.0], [0.5, 9.0]])
        ranked = rank_candidates(ranker, docs)
        assert ranked.doc_ids.tolist() == [1, 2, 0]

    def test_single_doc(self):
        ranked = rank_candidates(LinearRanker(np.ones(2)), np.ones((1, 2)))
        assert ranked.doc_ids.tolist() == [0]
        assert ranked.rank_of(0) == 1

    def test_output_is_permutation(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            k = int(rng.integers(1, 12))
            docs = rng.standard_normal((k, 4))
            ranked = rank_candidates(LinearRanker(rng.standard_normal(4)), docs)
            assert sorted(ranked.doc_ids.tolist()) == list(range(k))

    def test_reranking_is_idempotent(self):
        rng = np.random.default_rng(11)
        ranker = LinearRanker(rng.standard_normal(3))
        docs = rng.standard_normal((6, 3))
        first = rank_candidates(ranker, docs)
        again = rank_candidates(ranker, docs[first.doc_ids])
        assert again.doc_ids.tolist() == list(range(6))


class TestPolicySerialization:
    def test_softmax_round_trip(self):
        rng = np.random.default_rng(12)
        policy = SoftmaxLinearPolicy(rng.standard_normal((3, 4)),
                                     temperature=0.5, uniform_mix=0.1)
        back = policy_from_json(policy_to_json(policy))
        assert isinstance(back, SoftmaxLinearPolicy)
        assert np.array_equal(back.weights, policy.weights)
        assert back.temperature == policy.temperature
        assert back.uniform_mix == policy.uniform_mix

    def test_epsilon_greedy_round_trip(self):
        policy = EpsilonGreedyPolicy(np.arange(6.0).reshape(2, 3), epsilon=0.2)
        back = policy_from_json(policy_to_json(policy))
        assert isinstance(back, EpsilonGreedyPolicy)
        assert np.array_equal(back.base_scores, policy.base_scores)
        assert back.epsilon == 0.2

    def test_ranker_round_trip(self):
        ranker = LinearRanker(np.array([1.5, -2.0]))
        back = policy_from_json(policy_to_json(ranker))
        assert isinstance(back, LinearRanker)
        assert np.array_equal(back.weights, ranker.weights)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            policy_from_json('{"kind": "mystery"}')
