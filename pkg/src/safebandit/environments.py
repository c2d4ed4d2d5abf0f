"""Simulated interaction environments.

Classification as a bandit: the environment shows a feature vector, the policy
picks a class, and the reward depends on correctness — deterministically for
the perfect profile, Bernoulli(0.6)/Bernoulli(0.4) for the near-random one.
Ranking: the deployed ranker displays a list, users examine position i with
probability (1/i)^η inside the top 10, and click examined documents with a
grade-conditioned probability profile. Also hosts the synthetic dataset
generators and baseline-policy construction from subsampled supervision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    ClickRecord,
    ContextVector,
    LoggedInteraction,
    RankedList,
    RankingInteraction,
)
from .data_io import ClassificationInstance, RankingQuery, subsample
from .learners import RANKER_CLIP_RADIUS
from .policies import (
    EpsilonGreedyPolicy,
    LinearRanker,
    SoftmaxLinearPolicy,
    rank_candidates,
    sample_action,
)

__all__ = [
    "RewardProfile",
    "PERFECT_REWARDS",
    "NEAR_RANDOM_REWARDS",
    "reward_profile",
    "classification_reward",
    "ExaminationModel",
    "examination_probability",
    "ClickProfile",
    "PERFECT_CLICKS",
    "POSITION_BIASED_CLICKS",
    "NEAR_RANDOM_CLICKS",
    "click_profile",
    "simulate_clicks",
    "ClassificationInstance",
    "ClassificationEnvironment",
    "classification_round",
    "make_synthetic_classification",
    "RankingEnvironment",
    "ranking_round",
    "make_synthetic_ranking",
    "make_baseline",
    "train_multiclass_logistic",
    "train_pairwise_ranker",
]


@dataclass(frozen=True)
class RewardProfile:
    """Reward model for classification feedback.

    "perfect" pays 1 for a correct label and 0 otherwise; "near-random" pays 1
    with probability p_correct when correct and p_incorrect when not.
    """

    name: str
    p_correct: float = 0.6
    p_incorrect: float = 0.4

    def __post_init__(self) -> None:
        if self.name not in ("perfect", "near-random"):
            raise ValueError(f"unknown reward profile {self.name!r}")
        if not (0.0 <= self.p_incorrect <= self.p_correct <= 1.0):
            raise ValueError("need 0 <= p_incorrect <= p_correct <= 1")

    def expected(self, correct: bool) -> float:
        if self.name == "perfect":
            return 1.0 if correct else 0.0
        return self.p_correct if correct else self.p_incorrect

    def sample(self, correct: bool, rng: np.random.Generator) -> float:
        if self.name == "perfect":
            return 1.0 if correct else 0.0
        return 1.0 if rng.random() < self.expected(correct) else 0.0


PERFECT_REWARDS = RewardProfile("perfect")
NEAR_RANDOM_REWARDS = RewardProfile("near-random")

_REWARD_PROFILES = {p.name: p for p in (PERFECT_REWARDS, NEAR_RANDOM_REWARDS)}


def reward_profile(name: str) -> RewardProfile:
    try:
        return _REWARD_PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown reward profile {name!r}; choose from {sorted(_REWARD_PROFILES)}"
        ) from None


def classification_reward(chosen: int, truth: int, profile: RewardProfile,
                          rng: np.random.Generator) -> float:
    """Reward for choosing a label; draws from the RNG only when stochastic."""
    return profile.sample(chosen == truth, rng)


@dataclass(frozen=True)
class ExaminationModel:
    """Position-biased examination: P(examine rank i) = (1/i)^η up to a cutoff."""

    bias_severity: float = 1.0
    cutoff: int = 10

    def __post_init__(self) -> None:
        if self.bias_severity < 0.0:
            raise ValueError("bias severity must be non-negative")
        if self.cutoff < 1:
            raise ValueError("cutoff must be at least 1")


def examination_probability(model: ExaminationModel, rank: int) -> float:
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > model.cutoff:
        return 0.0
    return (1.0 / rank) ** model.bias_severity


@dataclass(frozen=True)
class ClickProfile:
    """P(click | examined, relevance grade) for grades 0..4."""

    name: str
    probs: tuple[float, float, float, float, float]

    def __post_init__(self) -> None:
        if len(self.probs) != 5:
            raise ValueError("click profile needs one probability per grade 0..4")
        if any(not 0.0 <= p <= 1.0 for p in self.probs):
            raise ValueError("click probabilities must lie in [0, 1]")


PERFECT_CLICKS = ClickProfile("perfect", (0.00, 0.20, 0.40, 0.80, 1.00))
POSITION_BIASED_CLICKS = ClickProfile("position-biased", (0.10, 0.10, 0.10, 1.00, 1.00))
NEAR_RANDOM_CLICKS = ClickProfile("near-random", (0.40, 0.45, 0.50, 0.55, 0.60))

_CLICK_PROFILES = {
    p.name: p for p in (PERFECT_CLICKS, POSITION_BIASED_CLICKS, NEAR_RANDOM_CLICKS)
}


def click_profile(name: str) -> ClickProfile:
    try:
        return _CLICK_PROFILES[name]
    except KeyError:
        raise ValueError(
            f"unknown click profile {name!r}; choose from {sorted(_CLICK_PROFILES)}"
        ) from None


def simulate_clicks(ranked: RankedList, relevance, model: ExaminationModel,
                    profile: ClickProfile, rng: np.random.Generator
                    ) -> list[ClickRecord]:
    """Simulate one user pass over the displayed list.

    Each position inside the cutoff is examined independently with the
    position's examination probability; examined documents are clicked with
    the grade's click probability. `relevance` is indexed by doc id. Every
    returned record stores the examination propensity of its position.
    """
    grades = np.asarray(relevance, dtype=np.int64)
    if grades.size and (grades.min() < 0 or grades.max() > 4):
        raise ValueError("relevance grades must lie in 0..4")
    records = []
    for pos in range(1, min(len(ranked), model.cutoff) + 1):
        doc = int(ranked.doc_ids[pos - 1])
        p_exam = examination_probability(model, pos)
        examined = bool(rng.random() < p_exam)
        clicked = False
        if examined:
            clicked = bool(rng.random() < profile.probs[int(grades[doc])])
        records.append(
            ClickRecord(rank=pos, doc_id=doc, examined=examined,
                        clicked=clicked, propensity=p_exam)
        )
    return records


class ClassificationEnvironment:
    """A labeled pool served as a bandit stream (uniform with replacement)."""

    def __init__(self, train: Sequence[ClassificationInstance],
                 test: Sequence[ClassificationInstance],
                 profile: RewardProfile) -> None:
        if not train:
            raise ValueError("training pool must be non-empty")
        self.train = list(train)
        self.test = list(test)
        self.profile = profile
        self.train_matrix = np.vstack([i.features.values for i in self.train])
        self.train_labels = np.asarray([i.label for i in self.train], dtype=np.int64)
        if self.test:
            self.test_matrix = np.vstack([i.features.values for i in self.test])
            self.test_labels = np.asarray(
                [i.label for i in self.test], dtype=np.int64
            )
        else:
            self.test_matrix = np.zeros((0, self.train_matrix.shape[1]))
            self.test_labels = np.zeros(0, dtype=np.int64)
        self.n_features = int(self.train_matrix.shape[1])
        labels = np.concatenate([self.train_labels, self.test_labels])
        self.n_actions = int(labels.max()) + 1

    def draw_instance(self, rng: np.random.Generator) -> ClassificationInstance:
        return self.train[int(rng.integers(0, len(self.train)))]

    def true_expected_reward(self, policy) -> float:
        """Exact expected per-round reward of a stochastic policy on this stream.

        E[r] = e_wrong + (e_right − e_wrong)·P(correct), with P(correct) the
        mean probability the policy puts on the true label.
        """
        probs = _batch_probs(policy, self.train_matrix)
        acc = float(
            probs[np.arange(len(self.train)), self.train_labels].mean()
        )
        e_right = self.profile.expected(True)
        e_wrong = self.profile.expected(False)
        return e_wrong + (e_right - e_wrong) * acc


def _batch_probs(policy, X: np.ndarray) -> np.ndarray:
    batch = getattr(policy, "batch_action_probabilities", None)
    if batch is not None:
        return batch(X)
    return np.stack([policy.action_probabilities(X[i]) for i in range(X.shape[0])])


def classification_round(env: ClassificationEnvironment, policy,
                         rng: np.random.Generator) -> LoggedInteraction:
    """One bandit round: draw an instance, act, observe the reward."""
    instance = env.draw_instance(rng)
    action, propensity = sample_action(policy, instance.features, rng)
    reward = classification_reward(action, instance.label, env.profile, rng)
    return LoggedInteraction(
        context=instance.features, action=action,
        reward=reward, propensity=propensity,
    )


def make_synthetic_classification(
    n_classes: int = 10,
    n_features: int = 20,
    n_train: int = 2000,
    n_test: int = 2000,
    separation: float = 1.0,
    profile: Union[RewardProfile, str] = PERFECT_REWARDS,
    seed: int = 0,
) -> ClassificationEnvironment:
    """Gaussian class clusters: class means scaled by `separation`, unit noise.

    Labels are exactly balanced; every pool vector gets its index as dedup key
    so logged feedback aggregates per pool entry.
    """
    if isinstance(profile, str):
        profile = reward_profile(profile)
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((n_classes, n_features))

    def build(count: int, keyed: bool) -> list[ClassificationInstance]:
        labels = np.arange(count) % n_classes
        features = means[labels] + rng.standard_normal((count, n_features))
        return [
            ClassificationInstance(
                features=ContextVector(features[i], dedup_key=i if keyed else None),
                label=int(labels[i]),
            )
            for i in range(count)
        ]

    return ClassificationEnvironment(
        train=build(n_train, keyed=True),
        test=build(n_test, keyed=False),
        profile=profile,
    )


class RankingEnvironment:
    """A pool of graded queries served uniformly with replacement."""

    def __init__(self, queries: Sequence[RankingQuery],
                 test_queries: Sequence[RankingQuery],
                 model: ExaminationModel, profile: ClickProfile) -> None:
        if not queries:
            raise ValueError("query pool must be non-empty")
        self.queries = list(queries)
        self.test_queries = list(test_queries)
        self.model = model
        self.profile = profile
        self.n_features = int(self.queries[0].doc_features.shape[1])

    def draw_query(self, rng: np.random.Generator) -> RankingQuery:
        return self.queries[int(rng.integers(0, len(self.queries)))]

    def true_document_value(self, ranker: LinearRanker) -> float:
        """Exact expectation of the document-level click estimate for a ranker.

        Examination propensities cancel in expectation, leaving per query
        Σ_docs P(click | grade)·λ(rank under the ranker inside the cutoff).
        """
        probs = np.asarray(self.profile.probs)
        total = 0.0
        for query in self.queries:
            ranked = rank_candidates(ranker, query.doc_features)
            top = ranked.doc_ids[: self.model.cutoff]
            lam = 1.0 / np.log2(2.0 + np.arange(top.size))
            total += float(lam @ probs[query.grades[top]])
        return total / len(self.queries)


def ranking_round(env: RankingEnvironment, ranker: LinearRanker,
                  rng: np.random.Generator):
    """One ranking round: draw a query, display the ranking, observe clicks."""
    query = env.draw_query(rng)
    displayed = rank_candidates(ranker, query.doc_features)
    clicks = simulate_clicks(displayed, query.grades, env.model, env.profile, rng)
    return RankingInteraction(
        doc_features=query.doc_features, clicks=tuple(clicks),
        query_key=query.query_key,
    ), query


def make_synthetic_ranking(
    n_queries: int = 200,
    n_test_queries: int = 200,
    docs_per_query: int = 25,
    n_features: int = 20,
    seed: int = 0,
    bias_severity: float = 1.0,
    profile: Union[ClickProfile, str] = PERFECT_CLICKS,
) -> RankingEnvironment:
    """Graded synthetic queries with a linear relevance signal.

    Grades come from thresholding a latent score w*·x + noise at fixed
    quantiles (grade shares roughly 50/20/15/10/5%), so a linear ranker can
    recover the ordering.
    """
    from scipy.stats import norm

    if isinstance(profile, str):
        profile = click_profile(profile)
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(n_features)
    w_star /= np.linalg.norm(w_star)
    noise = 0.5
    # Latent score is N(0, 1 + noise²); cut at the grade-share quantiles.
    shares = np.array([0.50, 0.20, 0.15, 0.10, 0.05])
    thresholds = norm.ppf(np.cumsum(shares)[:-1]) * np.sqrt(1.0 + noise**2)

    def build(count: int, key_base: Optional[int]) -> list[RankingQuery]:
        out = []
        for q in range(count):
            X = rng.standard_normal((docs_per_query, n_features))
            latent = X @ w_star + noise * rng.standard_normal(docs_per_query)
            grades = np.searchsorted(thresholds, latent)
            out.append(
                RankingQuery(
                    doc_features=X, grades=grades,
                    query_key=(key_base + q) if key_base is not None else None,
                )
            )
        return out

    return RankingEnvironment(
        queries=build(n_queries, key_base=0),
        test_queries=build(n_test_queries, key_base=None),
        model=ExaminationModel(bias_severity=bias_severity),
        profile=profile,
    )


def train_multiclass_logistic(X: np.ndarray, y: np.ndarray, n_classes: int,
                              epochs: int, learn_rate: float,
                              rng: np.random.Generator) -> np.ndarray:
    """Per-example SGD on the multinomial cross-entropy; returns (n, m) weights."""
    W = np.zeros((n_classes, X.shape[1]))
    for _ in range(epochs):
        for i in rng.permutation(X.shape[0]):
            z = W @ X[i]
            z -= z.max()
            p = np.exp(z)
            p /= p.sum()
            p[y[i]] -= 1.0  # softmax gradient of the negative log-likelihood
            W -= learn_rate * np.outer(p, X[i])
    return W


def train_pairwise_ranker(queries: Sequence[RankingQuery], epochs: int,
                          learn_rate: float, margin: float,
                          rng: np.random.Generator) -> LinearRanker:
    """Supervised pairwise hinge on grade-ordered document pairs."""
    m = int(queries[0].doc_features.shape[1])
    w = np.zeros(m)
    for _ in range(epochs):
        for qi in rng.permutation(len(queries)):
            query = queries[qi]
            grades = query.grades
            docs = query.doc_features
            higher, lower = np.nonzero(grades[:, None] > grades[None, :])
            for i, j in zip(higher, lower):
                diff = docs[i] - docs[j]
                if w @ diff < margin:
                    w += learn_rate * diff
            norm = np.linalg.norm(w)
            if norm > RANKER_CLIP_RADIUS:
                w *= RANKER_CLIP_RADIUS / norm
    return LinearRanker(w)


def make_baseline(train_pool, fraction: float, policy_kind: str,
                  rng: np.random.Generator, epsilon: float = 0.1,
                  epochs: int = 20, learn_rate: float = 0.01):
    """Train a production-like baseline on a small supervised subsample.

    Classification: multinomial logistic regression on ⌈fraction·N⌉ instances,
    wrapped in ε-greedy so the logged propensities are bounded below by ε/n.
    The subsample is redrawn a few times if it misses a class outright.
    Ranking: a pairwise hinge ranker on ⌈fraction·N⌉ whole queries.
    """
    if not train_pool:
        raise ValueError("training pool must be non-empty")
    if policy_kind == "classification":
        labels = {inst.label for inst in train_pool}
        sample = subsample(train_pool, fraction, rng)
        for _ in range(20):
            if {inst.label for inst in sample} == labels:
                break
            sample = subsample(train_pool, fraction, rng)
        X = np.vstack([inst.features.values for inst in sample])
        y = np.asarray([inst.label for inst in sample], dtype=np.int64)
        n_classes = max(labels) + 1
        W = train_multiclass_logistic(X, y, n_classes, epochs, learn_rate, rng)
        return EpsilonGreedyPolicy(W, epsilon)
    if policy_kind == "ranking":
        sample = subsample(train_pool, fraction, rng)
        return train_pairwise_ranker(sample, epochs, learn_rate, 1.0, rng)
    raise ValueError(f"unknown policy kind {policy_kind!r}")
