"""Experiment metrics: cumulative reward, regret, held-out reward, nDCG, t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .core import RankedList
from .policies import (
    EpsilonGreedyPolicy,
    LinUcbState,
    LinearRanker,
    SoftmaxLinearPolicy,
    ThompsonState,
    rank_candidates,
)


@dataclass(frozen=True)
class MetricSeries:
    """A metric sampled at strictly increasing checkpoint rounds."""

    metric_name: str
    checkpoints: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        rounds = [t for t, _ in self.checkpoints]
        if any(b <= a for a, b in zip(rounds, rounds[1:])):
            raise ValueError("checkpoint rounds must be strictly increasing")
        object.__setattr__(self, "checkpoints", tuple(self.checkpoints))

    def values(self) -> list[float]:
        return [v for _, v in self.checkpoints]


def default_checkpoints(horizon: int) -> list[int]:
    """Powers of 10 up to the horizon, always including the horizon itself."""
    points = []
    p = 10
    while p < horizon:
        points.append(p)
        p *= 10
    points.append(horizon)
    return points


def _series_at(values: np.ndarray, checkpoints: Optional[Sequence[int]],
               name: str) -> MetricSeries:
    prefix = np.cumsum(values)
    if checkpoints is None:
        checkpoints = range(1, len(values) + 1)
    picked = []
    for t in checkpoints:
        if not 1 <= t <= len(values):
            raise ValueError(f"checkpoint {t} outside trace of length {len(values)}")
        picked.append((int(t), float(prefix[t - 1])))
    return MetricSeries(metric_name=name, checkpoints=tuple(picked))


def cumulative_reward(rewards: Sequence[float],
                      checkpoints: Optional[Sequence[int]] = None
                      ) -> MetricSeries:
    """Prefix sums of per-round rewards, sampled at the given rounds."""
    values = np.asarray(rewards, dtype=np.float64)
    if values.size == 0:
        raise ValueError("trace must be non-empty")
    return _series_at(values, checkpoints, "cumulative_reward")


def regret(rewards: Sequence[float], oracle_rewards: Sequence[float],
           checkpoints: Optional[Sequence[int]] = None) -> MetricSeries:
    """Cumulative reward gap to the per-round optimal action."""
    values = np.asarray(rewards, dtype=np.float64)
    oracle = np.asarray(oracle_rewards, dtype=np.float64)
    if values.size == 0:
        raise ValueError("trace must be non-empty")
    if oracle.shape != values.shape:
        raise ValueError("oracle rewards must cover every round of the trace")
    return _series_at(oracle - values, checkpoints, "regret")


def greedy_score_matrix(policy) -> np.ndarray:
    """The (n, m) linear score matrix whose row-argmax is the greedy action."""
    if isinstance(policy, SoftmaxLinearPolicy):
        return policy.weights
    if isinstance(policy, EpsilonGreedyPolicy):
        return policy.base_scores
    if isinstance(policy, LinUcbState):
        return np.stack(
            [np.linalg.solve(policy.A[a], policy.b[a])
             for a in range(policy.n_actions)]
        )
    if isinstance(policy, ThompsonState):
        return np.stack(
            [policy.posterior_mean(a) for a in range(policy.n_actions)]
        )
    raise TypeError(f"no greedy scores for policy type {type(policy).__name__}")


def holdout_accuracy(policy, test_set) -> float:
    """Greedy-action accuracy over held-out labeled instances."""
    if not test_set:
        raise ValueError("test set must be non-empty")
    X = np.vstack([inst.features.values for inst in test_set])
    y = np.asarray([inst.label for inst in test_set], dtype=np.int64)
    predicted = np.argmax(X @ greedy_score_matrix(policy).T, axis=1)
    return float(np.mean(predicted == y))


def average_reward_holdout(policy, test_set, profile) -> float:
    """Expected per-action reward of the greedy policy on held-out data.

    Deterministic under a perfect profile (it equals accuracy); under a
    stochastic profile the expectation is computed analytically from the
    profile's correct/incorrect reward rates, so no sampling noise enters.
    """
    accuracy = holdout_accuracy(policy, test_set)
    e_right = profile.expected(True)
    e_wrong = profile.expected(False)
    return e_wrong + (e_right - e_wrong) * accuracy


def ndcg_at_k(ranking: RankedList, grades, k: int = 10) -> float:
    """nDCG@k with gain (2^grade − 1)/log₂(1 + rank); 0 when the ideal is 0."""
    grades = np.asarray(grades, dtype=np.int64)
    if grades.shape[0] != len(ranking):
        raise ValueError("grades must cover every ranked document")
    gains = np.power(2.0, grades) - 1.0
    depth = min(k, len(ranking))
    discounts = 1.0 / np.log2(2.0 + np.arange(depth))
    dcg = float(gains[ranking.doc_ids[:depth]] @ discounts)
    ideal = float(np.sort(gains)[::-1][:depth] @ discounts)
    if ideal == 0.0:
        return 0.0
    return dcg / ideal


def mean_ndcg(ranker: LinearRanker, queries, k: int = 10) -> float:
    """Average nDCG@k of a ranker over a set of graded queries."""
    if not queries:
        raise ValueError("query set must be non-empty")
    total = 0.0
    for query in queries:
        ranked = rank_candidates(ranker, query.doc_features)
        total += ndcg_at_k(ranked, query.grades, k)
    return total / len(queries)


def welch_t_test(sample_a, sample_b) -> tuple[float, float]:
    """Two-sided Welch t-test with Welch–Satterthwaite degrees of freedom.

    Degenerate variance convention: if both samples are constant, p is 1.0
    for equal means and 0.0 otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least 2 values")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    diff = float(a.mean() - b.mean())
    if var_a == 0.0 and var_b == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    se2_a = var_a / a.size
    se2_b = var_b / b.size
    t_stat = diff / math.sqrt(se2_a + se2_b)
    df = (se2_a + se2_b) ** 2 / (
        se2_a**2 / (a.size - 1) + se2_b**2 / (b.size - 1)
    )
    p_value = 2.0 * float(stats.t.sf(abs(t_stat), df))
    return t_stat, p_value
