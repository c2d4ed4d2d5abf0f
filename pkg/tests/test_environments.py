import math

import numpy as np
import pytest

from safebandit.data_io import RankingQuery
from safebandit.environments import (
    NEAR_RANDOM_CLICKS,
    NEAR_RANDOM_REWARDS,
    PERFECT_CLICKS,
    PERFECT_REWARDS,
    POSITION_BIASED_CLICKS,
    ClassificationEnvironment,
    ExaminationModel,
    RankingEnvironment,
    classification_reward,
    classification_round,
    click_profile,
    examination_probability,
    make_baseline,
    make_synthetic_classification,
    make_synthetic_ranking,
    ranking_round,
    reward_profile,
    simulate_clicks,
)
from safebandit.evaluation import holdout_accuracy
from safebandit.policies import EpsilonGreedyPolicy, LinearRanker, rank_candidates
from safebandit.core import RankedList


class TestRewardProfiles:
    def test_perfect_is_deterministic(self):
        rng = np.random.default_rng(0)
        assert classification_reward(3, 3, PERFECT_REWARDS, rng) == 1.0
        assert classification_reward(3, 4, PERFECT_REWARDS, rng) == 0.0

    def test_near_random_constants(self):
        assert NEAR_RANDOM_REWARDS.p_correct == 0.6
        assert NEAR_RANDOM_REWARDS.p_incorrect == 0.4

    def test_near_random_correct_rate(self):
        rng = np.random.default_rng(1)
        draws = 100_000
        hits = sum(classification_reward(0, 0, NEAR_RANDOM_REWARDS, rng)
                   for _ in range(draws))
        assert abs(hits / draws - 0.6) <= 0.005

    def test_near_random_incorrect_rate(self):
        rng = np.random.default_rng(2)
        draws = 100_000
        hits = sum(classification_reward(0, 1, NEAR_RANDOM_REWARDS, rng)
                   for _ in range(draws))
        sigma = math.sqrt(0.4 * 0.6 / draws)
        assert abs(hits / draws - 0.4) <= 3 * sigma

    def test_profile_lookup(self):
        assert reward_profile("perfect") is PERFECT_REWARDS
        assert reward_profile("near-random") is NEAR_RANDOM_REWARDS
        with pytest.raises(ValueError):
            reward_profile("bogus")


class TestExaminationModel:
    def test_eta_one_sequence(self):
        model = ExaminationModel(bias_severity=1.0)
        assert examination_probability(model, 1) == 1.0
        assert examination_probability(model, 2) == 0.5
        assert abs(examination_probability(model, 3) - 1.0 / 3.0) < 1e-15
        assert examination_probability(model, 10) == 0.1
        assert examination_probability(model, 11) == 0.0

    def test_eta_zero_examines_top_ten_always(self):
        model = ExaminationModel(bias_severity=0.0)
        assert all(examination_probability(model, k) == 1.0
                   for k in range(1, 11))
        assert examination_probability(model, 11) == 0.0

    def test_eta_two_squares_the_decay(self):
        model = ExaminationModel(bias_severity=2.0)
        assert examination_probability(model, 2) == 0.25
        assert abs(examination_probability(model, 3) - 1.0 / 9.0) < 1e-15


class TestClickProfiles:
    def test_exact_constants(self):
        assert PERFECT_CLICKS.probs == (0.00, 0.20, 0.40, 0.80, 1.00)
        assert POSITION_BIASED_CLICKS.probs == (0.10, 0.10, 0.10, 1.00, 1.00)
        assert NEAR_RANDOM_CLICKS.probs == (0.40, 0.45, 0.50, 0.55, 0.60)

    def test_profile_lookup(self):
        assert click_profile("perfect") is PERFECT_CLICKS
        assert click_profile("position-biased") is POSITION_BIASED_CLICKS
        assert click_profile("near-random") is NEAR_RANDOM_CLICKS
        with pytest.raises(ValueError):
            click_profile("bogus")


def displayed_list(k):
    return RankedList(np.arange(k), np.arange(k, 0, -1, dtype=float))


class TestSimulateClicks:
    def test_grade_zero_never_clicks_under_perfect(self):
        rng = np.random.default_rng(3)
        model = ExaminationModel(bias_severity=0.0)
        grades = np.zeros(10, dtype=np.int64)
        for _ in range(200):
            clicks = simulate_clicks(displayed_list(10), grades, model,
                                     PERFECT_CLICKS, rng)
            assert not any(c.clicked for c in clicks)

    def test_grade_four_always_clicks_when_examined(self):
        rng = np.random.default_rng(4)
        model = ExaminationModel(bias_severity=0.0)
        grades = np.full(12, 4, dtype=np.int64)
        clicks = simulate_clicks(displayed_list(12), grades, model,
                                 PERFECT_CLICKS, rng)
        top10 = [c for c in clicks if c.rank <= 10]
        assert len(top10) == 10 and all(c.clicked for c in top10)
        assert not any(c.clicked for c in clicks if c.rank > 10)

    def test_never_clicks_unexamined_or_beyond_cutoff(self):
        rng = np.random.default_rng(5)
        model = ExaminationModel(bias_severity=2.0)
        grades = np.full(15, 4, dtype=np.int64)
        for _ in range(300):
            clicks = simulate_clicks(displayed_list(15), grades, model,
                                     NEAR_RANDOM_CLICKS, rng)
            for c in clicks:
                if c.clicked:
                    assert c.examined and c.rank <= 10

    def test_propensity_is_examination_probability(self):
        rng = np.random.default_rng(6)
        model = ExaminationModel(bias_severity=1.0)
        grades = np.full(5, 4, dtype=np.int64)
        clicks = simulate_clicks(displayed_list(5), grades, model,
                                 PERFECT_CLICKS, rng)
        for c in clicks:
            assert c.propensity == examination_probability(model, c.rank)

    def test_rank_two_grade_four_click_rate(self):
        rng = np.random.default_rng(7)
        model = ExaminationModel(bias_severity=1.0)
        grades = np.array([4, 4], dtype=np.int64)
        trials = 100_000
        hits = 0
        two_docs = displayed_list(2)
        for _ in range(trials):
            clicks = simulate_clicks(two_docs, grades, model, PERFECT_CLICKS,
                                     rng)
            if clicks[1].clicked:
                hits += 1
        assert abs(hits / trials - 0.5) <= 0.005


@pytest.fixture(scope="module")
def class_env():
    return make_synthetic_classification(
        n_classes=4, n_features=6, n_train=200, n_test=100,
        separation=2.0, profile=PERFECT_REWARDS, seed=0)


@pytest.fixture(scope="module")
def separable_env():
    return make_synthetic_classification(
        n_classes=5, n_features=8, n_train=500, n_test=500,
        separation=3.0, profile=PERFECT_REWARDS, seed=1)


@pytest.fixture(scope="module")
def rank_env():
    return make_synthetic_ranking(
        n_queries=60, n_test_queries=30, docs_per_query=12, n_features=5,
        seed=2, bias_severity=1.0, profile=PERFECT_CLICKS)


class TestClassificationEnvironment:
    @pytest.fixture
    def env(self, class_env):
        return class_env

    def test_shapes_and_balance(self, env):
        assert len(env.train) == 200
        assert len(env.test) == 100
        assert env.n_actions == 4
        assert env.n_features == 6
        counts = np.bincount(env.train_labels, minlength=4)
        assert counts.tolist() == [50, 50, 50, 50]

    def test_same_seed_reproduces_data(self, env):
        again = make_synthetic_classification(
            n_classes=4, n_features=6, n_train=200, n_test=100,
            separation=2.0, profile=PERFECT_REWARDS, seed=0)
        assert np.array_equal(env.train_matrix, again.train_matrix)
        assert np.array_equal(env.train_labels, again.train_labels)

    def test_uniform_policy_value_is_chance(self, env):
        uniform = EpsilonGreedyPolicy(np.zeros((4, 6)), epsilon=1.0)
        assert abs(env.true_expected_reward(uniform) - 0.25) < 1e-12

    def test_round_is_fully_determined_for_deterministic_policy(self, env):
        scores = np.zeros((4, 6))
        policy = EpsilonGreedyPolicy(scores, epsilon=0.0)  # always action 0
        rng = np.random.default_rng(8)
        item = classification_round(env, policy, rng)
        assert item.action == 0
        assert item.propensity == 1.0
        truth = env.train_labels[env.train_matrix.tolist().index(
            item.context.values.tolist())]
        assert item.reward == (1.0 if truth == 0 else 0.0)

    def test_propensity_matches_policy_probability(self, env):
        rng = np.random.default_rng(9)
        policy = EpsilonGreedyPolicy(
            np.random.default_rng(1).standard_normal((4, 6)), epsilon=0.3)
        for _ in range(50):
            item = classification_round(env, policy, rng)
            probs = policy.action_probabilities(item.context)
            assert abs(item.propensity - probs[item.action]) < 1e-12

    def test_same_seed_gives_identical_stream(self, env):
        policy = EpsilonGreedyPolicy(np.zeros((4, 6)), epsilon=0.5)
        rounds_a = [classification_round(env, policy, np.random.default_rng(42))
                    for _ in range(1)]
        stream_a = []
        rng = np.random.default_rng(77)
        for _ in range(100):
            stream_a.append(classification_round(env, policy, rng))
        rng = np.random.default_rng(77)
        for i in range(100):
            item = classification_round(env, policy, rng)
            assert item.action == stream_a[i].action
            assert item.reward == stream_a[i].reward
            assert np.array_equal(item.context.values,
                                  stream_a[i].context.values)

    def test_long_run_uniform_reward_near_chance(self, env):
        policy = EpsilonGreedyPolicy(np.zeros((4, 6)), epsilon=1.0)
        rng = np.random.default_rng(10)
        total = sum(classification_round(env, policy, rng).reward
                    for _ in range(20_000))
        assert abs(total / 20_000 - 0.25) < 0.01

    def test_empty_train_pool_rejected(self):
        with pytest.raises(ValueError):
            ClassificationEnvironment([], [], PERFECT_REWARDS)


class TestMakeBaseline:
    @pytest.fixture
    def env(self, separable_env):
        return separable_env

    def test_full_fraction_is_accurate_on_separable_data(self, env):
        policy = make_baseline(env.train, 1.0, "classification",
                               np.random.default_rng(0), epsilon=0.1)
        assert holdout_accuracy(policy, env.test) > 0.95

    def test_small_fraction_sits_between_chance_and_full(self, env):
        full = make_baseline(env.train, 1.0, "classification",
                             np.random.default_rng(0), epsilon=0.1)
        full_acc = holdout_accuracy(full, env.test)
        for seed in range(3):
            small = make_baseline(env.train, 0.02, "classification",
                                  np.random.default_rng(seed), epsilon=0.1)
            acc = holdout_accuracy(small, env.test)
            assert 1.0 / 5.0 < acc < full_acc

    def test_min_propensity_floor(self, env):
        policy = make_baseline(env.train, 0.1, "classification",
                               np.random.default_rng(0), epsilon=0.2)
        probs = policy.action_probabilities(env.train[0].features)
        assert abs(probs.min() - 0.2 / 5) < 1e-12

    def test_same_seed_same_weights(self, env):
        a = make_baseline(env.train, 0.1, "classification",
                          np.random.default_rng(3), epsilon=0.1)
        b = make_baseline(env.train, 0.1, "classification",
                          np.random.default_rng(3), epsilon=0.1)
        assert np.array_equal(a.base_scores, b.base_scores)

    def test_unknown_kind_rejected(self, env):
        with pytest.raises(ValueError):
            make_baseline(env.train, 0.1, "clustering",
                          np.random.default_rng(0))

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            make_baseline([], 0.1, "classification", np.random.default_rng(0))


class TestRankingEnvironment:
    @pytest.fixture
    def env(self, rank_env):
        return rank_env

    def test_shapes(self, env):
        assert len(env.queries) == 60
        assert len(env.test_queries) == 30
        assert env.queries[0].doc_features.shape == (12, 5)
        assert env.n_features == 5

    def test_grade_shares_roughly_match_design(self, env):
        grades = np.concatenate([q.grades for q in env.queries])
        shares = np.bincount(grades, minlength=5) / grades.size
        assert np.all(np.abs(shares - [0.50, 0.20, 0.15, 0.10, 0.05]) < 0.06)

    def test_same_seed_reproduces_queries(self, env):
        again = make_synthetic_ranking(
            n_queries=60, n_test_queries=30, docs_per_query=12, n_features=5,
            seed=2, bias_severity=1.0, profile=PERFECT_CLICKS)
        assert np.array_equal(env.queries[0].doc_features,
                              again.queries[0].doc_features)
        assert np.array_equal(env.queries[5].grades, again.queries[5].grades)

    def test_true_document_value_hand_case(self):
        query = RankingQuery(
            doc_features=np.array([[1.0], [0.0]]),
            grades=np.array([4, 0], dtype=np.int64),
        )
        env = RankingEnvironment([query], [], ExaminationModel(1.0),
                                 PERFECT_CLICKS)
        ranker = LinearRanker(np.array([1.0]))  # grade-4 doc on top
        assert abs(env.true_document_value(ranker) - 1.0) < 1e-12
        flipped = LinearRanker(np.array([-1.0]))  # grade-4 doc at rank 2
        expected = 1.0 / math.log2(3.0)
        assert abs(env.true_document_value(flipped) - expected) < 1e-12

    def test_true_value_independent_of_bias_severity(self):
        query = RankingQuery(
            doc_features=np.array([[1.0], [0.5], [0.0]]),
            grades=np.array([2, 1, 3], dtype=np.int64),
        )
        ranker = LinearRanker(np.array([1.0]))
        values = [
            RankingEnvironment([query], [], ExaminationModel(eta),
                               NEAR_RANDOM_CLICKS).true_document_value(ranker)
            for eta in (0.0, 1.0, 2.0)
        ]
        assert max(values) - min(values) < 1e-12

    def test_ranking_round_pairs_interaction_with_query(self, env):
        rng = np.random.default_rng(11)
        ranker = LinearRanker(np.ones(5))
        interaction, query = ranking_round(env, ranker, rng)
        assert interaction.doc_features.shape == query.doc_features.shape
        # Click records cover only the examined window (top 10 of 12 docs).
        displayed_ids = [c.doc_id for c in interaction.clicks]
        assert len(displayed_ids) == 10
        assert len(set(displayed_ids)) == 10
        assert set(displayed_ids) <= set(range(query.n_docs))

    def test_empty_query_pool_rejected(self):
        with pytest.raises(ValueError):
            RankingEnvironment([], [], ExaminationModel(1.0), PERFECT_CLICKS)


class TestRankingBaseline:
    def test_pairwise_baseline_beats_random_ordering(self):
        env = make_synthetic_ranking(
            n_queries=100, n_test_queries=50, docs_per_query=10, n_features=6,
            seed=3, bias_severity=1.0, profile=PERFECT_CLICKS)
        baseline = make_baseline(env.queries, 0.5, "ranking",
                                 np.random.default_rng(0))
        zero = LinearRanker.zeros(6)
        assert env.true_document_value(baseline) > env.true_document_value(zero)
