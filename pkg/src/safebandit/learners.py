"""Weight-update rules for the learned policies.

Classification side: counterfactual IPS SGD on the policy probability (the
round-loop learner), its λ-translated variant, an online policy-gradient rule
on the log probability, and a value-regression step for the ε-greedy baseline.
Ranking side: pairwise online RankSVM with skip-above pair extraction, its
inverse-propensity-weighted counterfactual variant, and dueling-bandit
gradient descent judged by team-draft interleaving.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import ClickRecord, RankedList
from .policies import (
    EpsilonGreedyPolicy,
    LinearRanker,
    SoftmaxLinearPolicy,
    rank_candidates,
)

# L2 clip on ranker weights: keeps near-random click streams from driving the
# weight norm (and with it every hinge margin) off to infinity.
RANKER_CLIP_RADIUS = 100.0


@dataclass(frozen=True)
class LearnerConfig:
    """Step sizes and margins shared by the update rules.

    learn_rate is the gradient-ascent step of the round loop (distinct from
    the bias-severity exponent of the examination model). dbgd_delta scales
    the probe direction, dbgd_gamma the accepted step; ranksvm_margin is the
    hinge activation threshold; lambda_shift translates rewards for λ-IPS.
    """

    learn_rate: float = 0.01
    lambda_shift: float = 0.0
    dbgd_delta: float = 1.0
    dbgd_gamma: float = 0.01
    ranksvm_margin: float = 1.0

    def __post_init__(self) -> None:
        if self.learn_rate <= 0.0:
            raise ValueError("learn_rate must be positive")
        if self.dbgd_delta <= 0.0 or self.dbgd_gamma <= 0.0:
            raise ValueError("dbgd step sizes must be positive")


def _weighted_probability_step(policy: SoftmaxLinearPolicy, x, a: int,
                               weight: float, learn_rate: float) -> None:
    policy.weights += (learn_rate * weight) * policy.grad_probability(x, a)


def ips_sgd_update(policy: SoftmaxLinearPolicy, item, cfg: LearnerConfig
                   ) -> SoftmaxLinearPolicy:
    """Gradient ascent on the IPS objective: w += η·(r/p)·∇_w π(a|x)."""
    _weighted_probability_step(
        policy, item.context, item.action,
        item.reward / item.propensity, cfg.learn_rate,
    )
    return policy


def lambda_ips_update(policy: SoftmaxLinearPolicy, item, cfg: LearnerConfig
                      ) -> SoftmaxLinearPolicy:
    """IPS step on translated rewards: w += η·((r−λ)/p)·∇_w π(a|x)."""
    _weighted_probability_step(
        policy, item.context, item.action,
        (item.reward - cfg.lambda_shift) / item.propensity, cfg.learn_rate,
    )
    return policy


def policy_gradient_update(policy: SoftmaxLinearPolicy, x, a: int, r: float,
                           cfg: LearnerConfig) -> SoftmaxLinearPolicy:
    """On-policy gradient step on observed reward: w += η·r·∇_w log π(a|x)."""
    if r != 0.0:
        policy.weights += (cfg.learn_rate * r) * policy.grad_log_probability(x, a)
    return policy


def epsilon_greedy_update(policy: EpsilonGreedyPolicy, x, a: int, r: float,
                          cfg: LearnerConfig) -> EpsilonGreedyPolicy:
    """Least-squares SGD on the chosen action's value: θ_a += η·(r − θ_a·x)·x."""
    xv = x.values if hasattr(x, "values") else np.asarray(x, dtype=np.float64)
    residual = r - policy.base_scores[a] @ xv
    policy.base_scores[a] += cfg.learn_rate * residual * xv
    return policy


def _clip_weights(ranker: LinearRanker) -> None:
    norm = float(np.linalg.norm(ranker.weights))
    if norm > RANKER_CLIP_RADIUS:
        ranker.weights *= RANKER_CLIP_RADIUS / norm


def _skip_above_pairs(clicks: Sequence[ClickRecord]
                      ) -> list[tuple[ClickRecord, ClickRecord]]:
    """(clicked, unclicked-ranked-above) pairs, in display order."""
    ordered = sorted(clicks, key=lambda c: c.rank)
    pairs = []
    for i, clicked in enumerate(ordered):
        if not clicked.clicked:
            continue
        for above in ordered[:i]:
            if not above.clicked:
                pairs.append((clicked, above))
    return pairs


def ranksvm_pairwise_update(ranker: LinearRanker, clicks: Sequence[ClickRecord],
                            docs, cfg: LearnerConfig) -> LinearRanker:
    """Pairwise hinge step: a click prefers its doc over every skipped doc above.

    For each pair with w·(d⁺−d⁻) < margin, w += η·(d⁺−d⁻), processed in
    display order; the weight vector is L2-clipped once per call.
    """
    return _pairwise_hinge_update(ranker, clicks, docs, cfg, weighted=False)


def counterfactual_ranksvm_update(ranker: LinearRanker,
                                  clicks: Sequence[ClickRecord], docs,
                                  cfg: LearnerConfig) -> LinearRanker:
    """Pairwise hinge step with each pair inverse-propensity weighted.

    Identical pair extraction; the step for a pair is scaled by 1/p of the
    clicked document's examination propensity, debiasing position effects in
    the logged clicks.
    """
    return _pairwise_hinge_update(ranker, clicks, docs, cfg, weighted=True)


def _pairwise_hinge_update(ranker: LinearRanker, clicks: Sequence[ClickRecord],
                           docs, cfg: LearnerConfig, weighted: bool
                           ) -> LinearRanker:
    features = np.asarray(docs, dtype=np.float64)
    for clicked, above in _skip_above_pairs(clicks):
        diff = features[clicked.doc_id] - features[above.doc_id]
        if ranker.weights @ diff < cfg.ranksvm_margin:
            step = cfg.learn_rate
            if weighted:
                step /= clicked.propensity
            ranker.weights += step * diff
    _clip_weights(ranker)
    return ranker


def team_draft_interleave(list_a: RankedList, list_b: RankedList,
                          rng) -> tuple[RankedList, np.ndarray]:
    """Merge two rankings of the same candidates by alternating team picks.

    Each round a coin decides which team picks first; a pick places the
    team's highest-ranked document not yet in the output. Returns the merged
    list (with descending positional scores) and a per-position team array,
    0 for list_a picks and 1 for list_b. Team sizes differ by at most 1.
    """
    k = len(list_a)
    if len(list_b) != k:
        raise ValueError("interleaved lists must cover the same candidate set")
    placed = np.zeros(k, dtype=bool)
    out_ids = np.empty(k, dtype=np.int64)
    teams = np.empty(k, dtype=np.int8)
    pointers = [0, 0]
    orders = [list_a.doc_ids, list_b.doc_ids]
    filled = 0
    while filled < k:
        first = int(rng.integers(0, 2))
        for team in (first, 1 - first):
            if filled == k:
                break
            order = orders[team]
            p = pointers[team]
            while placed[order[p]]:
                p += 1
            pointers[team] = p + 1
            out_ids[filled] = order[p]
            teams[filled] = team
            placed[order[p]] = True
            filled += 1
    scores = np.arange(k, 0, -1, dtype=np.float64)
    return RankedList(doc_ids=out_ids, scores=scores), teams


def dbgd_step(ranker: LinearRanker, query_docs,
              user_model: Callable[[RankedList], Sequence[ClickRecord]],
              rng: np.random.Generator, cfg: LearnerConfig
              ) -> tuple[LinearRanker, RankedList, Sequence[ClickRecord]]:
    """One dueling-bandit round: probe a random direction, keep it if it wins.

    Ranks the query with the current weights and with w + δ·u for a unit
    direction u, interleaves both lists, shows the merged list, and counts
    clicks per team. Strictly more clicks for the candidate's team moves the
    weights by γ·u; ties (including zero clicks) keep them unchanged.
    """
    features = np.asarray(query_docs, dtype=np.float64)
    if features.shape[0] < 2:
        raise ValueError("dueling needs at least 2 candidate documents")
    u = rng.standard_normal(features.shape[1])
    u /= np.linalg.norm(u)
    candidate = LinearRanker(ranker.weights + cfg.dbgd_delta * u)
    current_list = rank_candidates(ranker, features)
    candidate_list = rank_candidates(candidate, features)
    displayed, teams = team_draft_interleave(current_list, candidate_list, rng)
    clicks = user_model(displayed)
    wins = [0, 0]
    for record in clicks:
        if record.clicked:
            wins[teams[record.rank - 1]] += 1
    if wins[1] > wins[0]:
        ranker.weights += cfg.dbgd_gamma * u
    return ranker, displayed, clicks
