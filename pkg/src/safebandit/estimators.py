"""Off-policy value estimation with high-confidence bounds.

The point estimate of a candidate policy π from a log collected by another
policy is the inverse-propensity-scored mean

    R̂(π) = (1/t) Σ_i (r_i / p_i) · π(a_i | x_i).

Its empirical-Bernstein confidence radius is

    CB = 7b·ln(2/δ) / (3(t−1)) + (1/t)·sqrt( ln(2/δ)/(t−1) · Σ_{i,j}(R̂_i−R̂_j)² )

with b an a-priori bound on any single term r_i/p_i. Both are computable from
per-(action, context) aggregates instead of the raw log: accumulating
W1 = Σ r/p and W2 = Σ (r/p)² per unique pair reduces each evaluation to the
unique-pair support, which is what makes evaluating two policies every round
affordable. The pairwise sum collapses through the moment identity
Σ_{i,j}(R̂_i−R̂_j)² = 2t·ΣR̂² − 2(ΣR̂)².

A document-level estimate for the ranking task lives at the bottom: clicked
documents are weighted by the DCG rank weight their doc would get under the
candidate ranker, divided by the examination propensity at the logged rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    CLICK_CUTOFF,
    ContextVector,
    InteractionLog,
    LoggedInteraction,
    RankingInteraction,
)
from .policies import LinearRanker, rank_candidates


@dataclass(frozen=True)
class ConfidenceParams:
    """Confidence level 1−delta and the single-term bound b = max_r / min_p."""

    delta: float
    b: float

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.b <= 0.0:
            raise ValueError(f"b must be positive, got {self.b}")


@dataclass(frozen=True)
class PolicyEvaluation:
    """Point estimate with confidence interval [lcb, ucb] = mean ± cb."""

    mean: float
    cb: float
    lcb: float
    ucb: float
    t: int

    def __post_init__(self) -> None:
        if self.cb < 0.0:
            raise ValueError("confidence radius must be non-negative")
        if not (self.lcb <= self.mean <= self.ucb):
            raise ValueError("interval must contain the mean")

    @classmethod
    def from_mean_cb(cls, mean: float, cb: float, t: int) -> "PolicyEvaluation":
        return cls(mean=mean, cb=cb, lcb=mean - cb, ucb=mean + cb, t=t)


def _probs_matrix(policy, X: np.ndarray) -> np.ndarray:
    """π(·|x) for every row of X, using the policy's batch path when it has one."""
    batch = getattr(policy, "batch_action_probabilities", None)
    if batch is not None:
        return batch(X)
    return np.stack([policy.action_probabilities(X[i]) for i in range(X.shape[0])])


def ips_point_terms(log: InteractionLog, policy) -> np.ndarray:
    """Per-interaction terms R̂_i = (r_i/p_i)·π(a_i|x_i); their mean is R̂(π)."""
    if log.t == 0:
        return np.zeros(0)
    P = _probs_matrix(policy, log.context_matrix())
    pi = P[log.context_row_indices(), log.actions()]
    return log.rewards() / log.propensities() * pi


class StreamingEstimatorState:
    """Per-(action, context-key) aggregates maintained online during collection.

    Keeps W1[x, a] = Σ r/p and W2[x, a] = Σ (r/p)² per unique pair, the
    representative vector per context key, plus the raw (row, action, r/p)
    triples so exact per-interaction terms stay recoverable. Interactions
    without a dedup key get a private row each, degrading to O(t) support.
    Single writer; evaluations read a consistent snapshot between appends.
    """

    def __init__(self, n_actions: int) -> None:
        if n_actions < 1:
            raise ValueError("need at least one action")
        self.n_actions = int(n_actions)
        self.t = 0
        self._W1 = np.zeros((16, n_actions))
        self._W2 = np.zeros((16, n_actions))
        self._vectors: list[np.ndarray] = []
        self._row_key: list[Optional[int]] = []
        self._key_to_row: dict[int, int] = {}
        self._matrix_cache: Optional[np.ndarray] = None
        self._raw_rows: list[int] = []
        self._raw_actions: list[int] = []
        self._raw_weights: list[float] = []

    @property
    def n_rows(self) -> int:
        return len(self._vectors)

    def register_context(self, values: np.ndarray, key: Optional[int]) -> int:
        """Ensure a table row exists for this context; return its row index.

        Pre-registering an experiment's context pool up front keeps the row
        set (and any cached probability matrix) stable across the whole run.
        """
        if key is not None:
            row = self._key_to_row.get(key)
            if row is not None:
                return row
        row = len(self._vectors)
        self._vectors.append(np.asarray(values, dtype=np.float64))
        self._row_key.append(key)
        if key is not None:
            self._key_to_row[key] = row
        if row >= self._W1.shape[0]:
            grown = max(2 * self._W1.shape[0], row + 1)
            for name in ("_W1", "_W2"):
                old = getattr(self, name)
                new = np.zeros((grown, self.n_actions))
                new[: old.shape[0]] = old
                setattr(self, name, new)
        self._matrix_cache = None
        return row

    def context_matrix(self) -> np.ndarray:
        if not self._vectors:
            raise ValueError("no contexts registered")
        if self._matrix_cache is None or self._matrix_cache.shape[0] != self.n_rows:
            self._matrix_cache = np.vstack(self._vectors)
        return self._matrix_cache

    def add(self, row: int, action: int, weight: float) -> None:
        """Accumulate one interaction's r/p at a pre-registered row."""
        self._W1[row, action] += weight
        self._W2[row, action] += weight * weight
        self._raw_rows.append(row)
        self._raw_actions.append(int(action))
        self._raw_weights.append(float(weight))
        self.t += 1

    def w1_view(self) -> np.ndarray:
        return self._W1[: self.n_rows]

    def w2_view(self) -> np.ndarray:
        return self._W2[: self.n_rows]

    def table_entries(self) -> dict[tuple[int, int], float]:
        """Nonzero aggregate entries as {(action, context key): Σ r/p}.

        Rows registered without a key are reported under their row index.
        """
        out: dict[tuple[int, int], float] = {}
        W1 = self.w1_view()
        for row, action in zip(*np.nonzero(W1)):
            key = self._row_key[row]
            out[(int(action), key if key is not None else int(row))] = float(
                W1[row, action]
            )
        return out

    def policy_probs(self, policy) -> np.ndarray:
        """π(·|x) for every registered context row."""
        return _probs_matrix(policy, self.context_matrix())

    def moment_sums(self, policy, probs: Optional[np.ndarray] = None
                    ) -> tuple[float, float]:
        """(Σ R̂_i, Σ R̂_i²) over the whole log, at aggregate-table cost."""
        if probs is None:
            probs = self.policy_probs(policy)
        s1 = float(np.einsum("ij,ij->", probs, self.w1_view()))
        s2 = float(np.einsum("ij,ij,ij->", probs, probs, self.w2_view()))
        return s1, s2

    def raw_terms(self, policy) -> np.ndarray:
        """Exact per-interaction R̂_i vector, reconstructed from raw triples."""
        if self.t == 0:
            return np.zeros(0)
        P = self.policy_probs(policy)
        rows = np.asarray(self._raw_rows, dtype=np.int64)
        actions = np.asarray(self._raw_actions, dtype=np.int64)
        weights = np.asarray(self._raw_weights)
        return weights * P[rows, actions]


def aggregate_update(state: StreamingEstimatorState, item: LoggedInteraction
                     ) -> StreamingEstimatorState:
    """Fold one interaction into the aggregate table (one entry touched)."""
    row = state.register_context(item.context.values, item.context.dedup_key)
    state.add(row, item.action, item.reward / item.propensity)
    return state


def estimate_mean_fast(state: StreamingEstimatorState, policy) -> float:
    """R̂(π) from the aggregate table: (1/t)·Σ_{(a,x)} π(a|x)·W1[x,a]."""
    if state.t == 0:
        raise ValueError("cannot estimate from an empty state")
    s1, _ = state.moment_sums(policy)
    return s1 / state.t


def _bound_from_moments(t: int, s1: float, s2: float, params: ConfidenceParams
                        ) -> float:
    ln_term = math.log(2.0 / params.delta)
    # Moment identity; clamp tiny negatives from cancellation.
    pair_sum = max(2.0 * t * s2 - 2.0 * s1 * s1, 0.0)
    return 7.0 * params.b * ln_term / (3.0 * (t - 1)) + math.sqrt(
        ln_term / (t - 1) * pair_sum
    ) / t


def confidence_bound(terms, params: ConfidenceParams) -> float:
    """Empirical-Bernstein radius for a vector of per-interaction terms."""
    terms = np.asarray(terms, dtype=np.float64)
    t = terms.shape[0]
    if t < 2:
        raise ValueError("confidence bound undefined for fewer than 2 interactions")
    return _bound_from_moments(t, float(terms.sum()), float(terms @ terms), params)


def evaluate_policy(log: InteractionLog, policy, params: ConfidenceParams
                    ) -> PolicyEvaluation:
    """Reference evaluation straight from the log: mean and mean ± CB.

    With a single interaction the radius is undefined (the formula divides by
    t−1); the interval degenerates to (−∞, +∞) so no deployment check can pass.
    """
    if log.t == 0:
        raise ValueError("cannot evaluate a policy on an empty log")
    terms = ips_point_terms(log, policy)
    mean = float(terms.mean())
    if log.t < 2:
        return PolicyEvaluation(mean=mean, cb=math.inf, lcb=-math.inf,
                                ucb=math.inf, t=log.t)
    cb = _bound_from_moments(log.t, float(terms.sum()), float(terms @ terms), params)
    return PolicyEvaluation.from_mean_cb(mean, cb, log.t)


def evaluate_policy_fast(state: StreamingEstimatorState, policy,
                         params: ConfidenceParams,
                         probs: Optional[np.ndarray] = None) -> PolicyEvaluation:
    """Same result as evaluate_policy, computed from the aggregate table.

    `probs` may carry a precomputed policy_probs matrix (the round loop caches
    it for the deployed policy, which only changes on deployment).
    """
    if state.t == 0:
        raise ValueError("cannot evaluate a policy on an empty state")
    s1, s2 = state.moment_sums(policy, probs)
    mean = s1 / state.t
    if state.t < 2:
        return PolicyEvaluation(mean=mean, cb=math.inf, lcb=-math.inf,
                                ucb=math.inf, t=state.t)
    cb = _bound_from_moments(state.t, s1, s2, params)
    return PolicyEvaluation.from_mean_cb(mean, cb, state.t)


def bsea_evaluate(log: InteractionLog, policy) -> PolicyEvaluation:
    """Boundless evaluation: the interval collapses to the point estimate."""
    if log.t == 0:
        raise ValueError("cannot evaluate a policy on an empty log")
    mean = float(ips_point_terms(log, policy).mean())
    return PolicyEvaluation(mean=mean, cb=0.0, lcb=mean, ucb=mean, t=log.t)


def bsea_evaluate_fast(state: StreamingEstimatorState, policy,
                       probs: Optional[np.ndarray] = None) -> PolicyEvaluation:
    if state.t == 0:
        raise ValueError("cannot evaluate a policy on an empty state")
    s1, _ = state.moment_sums(policy, probs)
    mean = s1 / state.t
    return PolicyEvaluation(mean=mean, cb=0.0, lcb=mean, ucb=mean, t=state.t)


# --- ranking ------------------------------------------------------------------


def rank_weight(rank: int) -> float:
    """DCG weight λ(k) = 1/log₂(1+k) inside the click cutoff, 0 beyond."""
    if rank < 1:
        raise ValueError("rank is 1-based")
    if rank > CLICK_CUTOFF:
        return 0.0
    return 1.0 / math.log2(1.0 + rank)


# λ(k) indexed by 0-based position, padded so any position ≥ cutoff maps to 0.
def _rank_weight_table(n_docs: int) -> np.ndarray:
    table = np.zeros(max(n_docs, CLICK_CUTOFF))
    ks = np.arange(1, CLICK_CUTOFF + 1)
    table[:CLICK_CUTOFF] = 1.0 / np.log2(1.0 + ks)
    return table


def ranking_ips_estimate(click_log: Sequence[RankingInteraction],
                         ranker: LinearRanker) -> float:
    """Document-level IPS value of a candidate ranker on logged clicks.

    Each clicked document contributes the DCG weight of the rank the candidate
    ranker would give it, divided by the examination propensity at its logged
    rank; queries without clicks contribute 0 but still count in the mean.
    """
    if len(click_log) == 0:
        return 0.0
    total = 0.0
    for interaction in click_log:
        clicked = interaction.clicked_records()
        if not clicked:
            continue
        ranked = rank_candidates(ranker, interaction.doc_features)
        position = np.empty(len(ranked), dtype=np.int64)
        position[ranked.doc_ids] = np.arange(1, len(ranked) + 1)
        for record in clicked:
            if record.propensity <= 0.0:
                raise ValueError("clicked record carries a non-positive propensity")
            total += rank_weight(int(position[record.doc_id])) / record.propensity
    return total / len(click_log)


def ranking_reward_bound(bias_severity: float) -> float:
    """Bound on one query's estimate: Σ_{k≤10} λ(k) over the smallest propensity.

    The examination propensity inside the cutoff is at least (1/10)^η, and the
    clicked docs of one query occupy distinct candidate ranks, so their DCG
    weights sum to at most Σ_{k=1..10} λ(k).
    """
    lam_sum = sum(rank_weight(k) for k in range(1, CLICK_CUTOFF + 1))
    return lam_sum * CLICK_CUTOFF ** bias_severity


class RankingEstimatorState:
    """Online per-query aggregates for evaluating rankers during collection.

    Stores each unique query's candidate features once; click feedback is kept
    in flat arrays (interaction index, query row, doc id, inverse propensity).
    An evaluation re-ranks each unique query once, then reduces every logged
    click against the resulting rank-weight vectors in one vectorized pass.
    """

    def __init__(self) -> None:
        self.t = 0
        self._features: list[np.ndarray] = []
        self._offsets: list[int] = [0]  # doc-count prefix per unique query
        self._key_to_row: dict[int, int] = {}
        self._click_interaction: list[int] = []
        self._click_flat_doc: list[int] = []  # offsets[row] + doc_id per click
        self._click_inv_p: list[float] = []

    @property
    def n_queries(self) -> int:
        return len(self._features)

    def add(self, interaction: RankingInteraction) -> None:
        key = interaction.query_key
        row = self._key_to_row.get(key) if key is not None else None
        if row is None:
            row = len(self._features)
            self._features.append(interaction.doc_features)
            self._offsets.append(
                self._offsets[-1] + interaction.doc_features.shape[0]
            )
            if key is not None:
                self._key_to_row[key] = row
        base = self._offsets[row]
        for record in interaction.clicked_records():
            if record.propensity <= 0.0:
                raise ValueError("clicked record carries a non-positive propensity")
            self._click_interaction.append(self.t)
            self._click_flat_doc.append(base + record.doc_id)
            self._click_inv_p.append(1.0 / record.propensity)
        self.t += 1

    def per_query_weights(self, ranker: LinearRanker) -> list[np.ndarray]:
        """For each unique query, λ(rank under ranker) indexed by doc id."""
        out = []
        for features in self._features:
            ranked = rank_candidates(ranker, features)
            table = _rank_weight_table(len(ranked))
            weights = np.empty(len(ranked))
            weights[ranked.doc_ids] = table[: len(ranked)]
            out.append(weights)
        return out

    def terms(self, ranker: LinearRanker,
              weights: Optional[list] = None) -> np.ndarray:
        """Per-interaction estimates R̂_q, one entry per logged query round."""
        if weights is None:
            weights = self.per_query_weights(ranker)
        flat = np.concatenate(weights) if weights else np.zeros(0)
        if not self._click_interaction:
            return np.zeros(self.t)
        idx = np.asarray(self._click_interaction, dtype=np.int64)
        docs = np.asarray(self._click_flat_doc, dtype=np.int64)
        inv_p = np.asarray(self._click_inv_p)
        return np.bincount(idx, weights=flat[docs] * inv_p, minlength=self.t)


def ranking_evaluate(state: RankingEstimatorState, ranker: LinearRanker,
                     params: ConfidenceParams, boundless: bool = False,
                     weights: Optional[list] = None) -> PolicyEvaluation:
    """Mean and confidence interval of a ranker from logged click feedback.

    `weights` may carry precomputed per_query_weights for this ranker (the
    round loop caches them for the deployed ranker between deployments).
    """
    if state.t == 0:
        raise ValueError("cannot evaluate a ranker on an empty state")
    terms = state.terms(ranker, weights)
    mean = float(terms.mean())
    if boundless:
        return PolicyEvaluation(mean=mean, cb=0.0, lcb=mean, ucb=mean, t=state.t)
    if state.t < 2:
        return PolicyEvaluation(mean=mean, cb=math.inf, lcb=-math.inf,
                                ucb=math.inf, t=state.t)
    cb = _bound_from_moments(state.t, float(terms.sum()), float(terms @ terms), params)
    return PolicyEvaluation.from_mean_cb(mean, cb, state.t)
