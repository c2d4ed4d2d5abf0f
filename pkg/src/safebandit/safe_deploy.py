"""The guarded deployment loop.

Three policies cooperate: a frozen baseline, a learned policy warm-started
from it and updated counterfactually every round, and the deployed policy that
actually executes actions (initially the baseline). Each round the deployed
policy acts, the interaction is logged, the learned policy takes an IPS
gradient step, and both policies are evaluated on the full log. The learned
policy's snapshot replaces the deployed one as soon as its lower confidence
bound reaches the deployed policy's upper bound; the boundless variant
compares the two point estimates instead, trading the safety guarantee for
earlier deployment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    ContextVector,
    InteractionLog,
    LoggedInteraction,
    RankingInteraction,
    log_append,
)
from .environments import (
    ClassificationEnvironment,
    RankingEnvironment,
    classification_reward,
    simulate_clicks,
)
from .estimators import (
    ConfidenceParams,
    PolicyEvaluation,
    RankingEstimatorState,
    StreamingEstimatorState,
    aggregate_update,
    bsea_evaluate_fast,
    evaluate_policy_fast,
    rank_weight,
    ranking_evaluate,
)
from .learners import LearnerConfig, counterfactual_ranksvm_update, ips_sgd_update
from .policies import (
    EpsilonGreedyPolicy,
    LinearRanker,
    SoftmaxLinearPolicy,
    rank_candidates,
    sample_action,
)

MODES = ("sea", "bsea")

# A round source draws the next context and returns it with a reward callback
# and the oracle (best-action) expected reward for regret accounting.
RoundSource = Callable[
    [np.random.Generator], tuple[ContextVector, Callable[[int], float], float]
]


@dataclass(frozen=True)
class DeploymentRecord:
    """One deployment event: when it fired and what replaced what."""

    t: int
    eval_learned: PolicyEvaluation
    eval_deployed: PolicyEvaluation
    policy: object  # the snapshot that starts executing
    replaced: object  # the policy it displaced


def deployment_check(eval_w: PolicyEvaluation, eval_d: PolicyEvaluation) -> bool:
    """Deploy iff the learned policy's LCB reaches the deployed policy's UCB."""
    return eval_w.lcb >= eval_d.ucb


def warm_started_learner(policy, uniform_mix: float = 0.0,
                         temperature: float = 1.0) -> SoftmaxLinearPolicy:
    """A softmax policy initialized with the deployed policy's score weights.

    uniform_mix should match the deployment floor: with an ε-greedy baseline,
    mixing ε of uniform keeps every post-deployment propensity ≥ ε/n, so the
    experiment's declared reward bound b stays valid after any deployment.
    """
    if isinstance(policy, SoftmaxLinearPolicy):
        weights = policy.weights
    elif isinstance(policy, EpsilonGreedyPolicy):
        weights = policy.base_scores
    else:
        raise TypeError(
            f"cannot warm-start from policy type {type(policy).__name__}"
        )
    return SoftmaxLinearPolicy(weights.copy(), temperature=temperature,
                               uniform_mix=uniform_mix)


class SeaState:
    """Mutable state of one guarded-deployment replication."""

    def __init__(self, baseline, learned: SoftmaxLinearPolicy,
                 params: ConfidenceParams, mode: str = "sea",
                 learner_cfg: Optional[LearnerConfig] = None) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.baseline = baseline
        self.learned = learned
        self.deployed = baseline
        self.log = InteractionLog()
        self.params = params
        self.mode = mode
        self.learner_cfg = learner_cfg or LearnerConfig()
        self.deployments: list[DeploymentRecord] = []
        self.agg = StreamingEstimatorState(learned.n_actions)
        self.last_eval_learned: Optional[PolicyEvaluation] = None
        self.last_eval_deployed: Optional[PolicyEvaluation] = None
        self._deployed_probs: Optional[np.ndarray] = None

    @property
    def t(self) -> int:
        return self.agg.t

    def pre_register_contexts(self, instances) -> None:
        """Register a known context pool so the aggregate rows never grow
        mid-run (keeps the cached deployed-policy probabilities valid)."""
        for inst in instances:
            vec = inst.features if isinstance(inst.features, ContextVector) \
                else ContextVector(inst.features)
            self.agg.register_context(vec.values, vec.dedup_key)

    def _deployed_probs_current(self) -> np.ndarray:
        cached = self._deployed_probs
        if cached is None or cached.shape[0] != self.agg.n_rows:
            cached = self.agg.policy_probs(self.deployed)
            self._deployed_probs = cached
        return cached

    def evaluate_pair(self) -> tuple[PolicyEvaluation, PolicyEvaluation]:
        """Evaluate learned and deployed policies on the current log."""
        probs_d = self._deployed_probs_current()
        if self.mode == "bsea":
            eval_w = bsea_evaluate_fast(self.agg, self.learned)
            eval_d = bsea_evaluate_fast(self.agg, self.deployed, probs=probs_d)
        else:
            eval_w = evaluate_policy_fast(self.agg, self.learned, self.params)
            eval_d = evaluate_policy_fast(self.agg, self.deployed, self.params,
                                          probs=probs_d)
        return eval_w, eval_d

    def deploy(self, eval_w: PolicyEvaluation, eval_d: PolicyEvaluation) -> None:
        snapshot = self.learned.copy()
        self.deployments.append(
            DeploymentRecord(t=self.t, eval_learned=eval_w, eval_deployed=eval_d,
                             policy=snapshot, replaced=self.deployed)
        )
        self.deployed = snapshot
        self._deployed_probs = None


def sea_round(state: SeaState, x: ContextVector,
              reward_fn: Callable[[int], float],
              rng: np.random.Generator) -> tuple[SeaState, LoggedInteraction]:
    """One round: act with the deployed policy, learn, evaluate, maybe deploy.

    `reward_fn` maps the executed action to its observed reward. The
    evaluations of the round stay readable on the state afterwards.
    """
    action, propensity = sample_action(state.deployed, x, rng)
    reward = float(reward_fn(action))
    item = LoggedInteraction(context=x, action=action, reward=reward,
                             propensity=propensity)
    log_append(state.log, item)
    aggregate_update(state.agg, item)
    ips_sgd_update(state.learned, item, state.learner_cfg)
    eval_w, eval_d = state.evaluate_pair()
    state.last_eval_learned = eval_w
    state.last_eval_deployed = eval_d
    if deployment_check(eval_w, eval_d):
        state.deploy(eval_w, eval_d)
    return state, item


@dataclass(eq=False)
class ExperimentTrace:
    """Column-oriented per-round record of one replication."""

    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    mean_w: np.ndarray
    lcb_w: np.ndarray
    mean_d: np.ndarray
    ucb_d: np.ndarray
    deployed_flag: np.ndarray
    oracle_rewards: np.ndarray
    deployments: list[DeploymentRecord] = field(default_factory=list)

    @property
    def t(self) -> int:
        return int(self.rewards.shape[0])

    def cumulative_rewards(self) -> np.ndarray:
        return np.cumsum(self.rewards)

    def first_deployment_round(self) -> Optional[int]:
        return self.deployments[0].t if self.deployments else None

    @classmethod
    def empty(cls, T: int) -> "ExperimentTrace":
        return cls(
            actions=np.zeros(T, dtype=np.int64),
            rewards=np.zeros(T),
            propensities=np.ones(T),
            mean_w=np.full(T, np.nan),
            lcb_w=np.full(T, np.nan),
            mean_d=np.full(T, np.nan),
            ucb_d=np.full(T, np.nan),
            deployed_flag=np.zeros(T, dtype=bool),
            oracle_rewards=np.zeros(T),
        )


def sea_run(state: SeaState, source: RoundSource, T: int,
            rng: np.random.Generator) -> ExperimentTrace:
    """Run the round loop T times, recording the full per-round trace."""
    if T < 0:
        raise ValueError("horizon must be non-negative")
    trace = ExperimentTrace.empty(T)
    for i in range(T):
        x, reward_fn, oracle = source(rng)
        deployments_before = len(state.deployments)
        _, item = sea_round(state, x, reward_fn, rng)
        trace.actions[i] = item.action
        trace.rewards[i] = item.reward
        trace.propensities[i] = item.propensity
        eval_w = state.last_eval_learned
        eval_d = state.last_eval_deployed
        trace.mean_w[i] = eval_w.mean
        trace.lcb_w[i] = eval_w.lcb
        trace.mean_d[i] = eval_d.mean
        trace.ucb_d[i] = eval_d.ucb
        trace.deployed_flag[i] = len(state.deployments) > deployments_before
        trace.oracle_rewards[i] = oracle
    trace.deployments = list(state.deployments)
    return trace


def logging_run(policy, source: RoundSource, T: int, rng: np.random.Generator,
                learner: Optional[SoftmaxLinearPolicy] = None,
                update: Optional[Callable] = None,
                learner_cfg: Optional[LearnerConfig] = None) -> ExperimentTrace:
    """Run a fixed logging policy for T rounds (no deployment machinery).

    Optionally trains a counterfactual learner on the stream as it is logged;
    `update(learner, item, cfg)` is applied once per round. RNG consumption
    matches sea_run exactly, so a shared seed yields a bit-identical stream up
    to the first deployment of the paired guarded run.
    """
    trace = ExperimentTrace.empty(T)
    cfg = learner_cfg or LearnerConfig()
    for i in range(T):
        x, reward_fn, oracle = source(rng)
        action, propensity = sample_action(policy, x, rng)
        reward = float(reward_fn(action))
        trace.actions[i] = action
        trace.rewards[i] = reward
        trace.propensities[i] = propensity
        trace.oracle_rewards[i] = oracle
        if learner is not None and update is not None:
            item = LoggedInteraction(context=x, action=action, reward=reward,
                                     propensity=propensity)
            update(learner, item, cfg)
    return trace


def classification_round_source(env: ClassificationEnvironment) -> RoundSource:
    """Adapt a classification environment to the round-loop interface.

    RNG order per round is fixed: instance draw, action draw, then the reward
    draw (if the profile is stochastic). Paired runs rely on this order.
    """
    oracle = env.profile.expected(True)

    def source(rng: np.random.Generator):
        instance = env.draw_instance(rng)

        def reward_fn(action: int) -> float:
            return classification_reward(action, instance.label, env.profile, rng)

        return instance.features, reward_fn, oracle

    return source


def stream_rng(seed: int) -> np.random.Generator:
    """The RNG driving the interaction stream of one replication."""
    return np.random.default_rng([seed, 0])


def baseline_rng(seed: int) -> np.random.Generator:
    """A separate RNG for baseline training, so paired methods share streams."""
    return np.random.default_rng([seed, 1])


class RankingSeaState:
    """Guarded-deployment state for the ranking task.

    Click feedback is document-level: the learned ranker takes inverse-
    propensity-weighted pairwise steps, and both rankers are evaluated with
    the document-level click estimate every round.
    """

    def __init__(self, baseline: LinearRanker, params: ConfidenceParams,
                 mode: str = "sea",
                 learner_cfg: Optional[LearnerConfig] = None) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.baseline = baseline
        self.learned = baseline.copy()
        self.deployed = baseline
        self.params = params
        self.mode = mode
        self.learner_cfg = learner_cfg or LearnerConfig(learn_rate=0.001)
        self.deployments: list[DeploymentRecord] = []
        self.agg = RankingEstimatorState()
        self.last_eval_learned: Optional[PolicyEvaluation] = None
        self.last_eval_deployed: Optional[PolicyEvaluation] = None
        self._deployed_weights: Optional[list] = None

    @property
    def t(self) -> int:
        return self.agg.t

    def _deployed_weights_current(self):
        cached = self._deployed_weights
        if cached is None or len(cached) != self.agg.n_queries:
            cached = self.agg.per_query_weights(self.deployed)
            self._deployed_weights = cached
        return cached

    def deploy(self, eval_w: PolicyEvaluation, eval_d: PolicyEvaluation) -> None:
        snapshot = self.learned.copy()
        self.deployments.append(
            DeploymentRecord(t=self.t, eval_learned=eval_w, eval_deployed=eval_d,
                             policy=snapshot, replaced=self.deployed)
        )
        self.deployed = snapshot
        self._deployed_weights = None


def ranking_sea_run(state: RankingSeaState, env: RankingEnvironment, T: int,
                    rng: np.random.Generator) -> ExperimentTrace:
    """Run the guarded loop on the ranking task for T rounds.

    The trace's per-round reward is the DCG-weighted click count on the
    displayed list; the propensity column is not meaningful per round here
    (propensities are per document) and is left at 1.
    """
    trace = ExperimentTrace.empty(T)
    boundless = state.mode == "bsea"
    for i in range(T):
        query = env.draw_query(rng)
        displayed = rank_candidates(state.deployed, query.doc_features)
        clicks = simulate_clicks(displayed, query.grades, env.model,
                                 env.profile, rng)
        interaction = RankingInteraction(doc_features=query.doc_features,
                                         clicks=tuple(clicks),
                                         query_key=query.query_key)
        state.agg.add(interaction)
        counterfactual_ranksvm_update(state.learned, clicks,
                                      query.doc_features, state.learner_cfg)
        eval_w = ranking_evaluate(state.agg, state.learned, state.params,
                                  boundless=boundless)
        eval_d = ranking_evaluate(state.agg, state.deployed, state.params,
                                  boundless=boundless,
                                  weights=state._deployed_weights_current())
        state.last_eval_learned = eval_w
        state.last_eval_deployed = eval_d
        fired = deployment_check(eval_w, eval_d)
        if fired:
            state.deploy(eval_w, eval_d)
        trace.actions[i] = query.query_key if query.query_key is not None else -1
        trace.rewards[i] = sum(
            rank_weight(c.rank) for c in clicks if c.clicked
        )
        trace.mean_w[i] = eval_w.mean
        trace.lcb_w[i] = eval_w.lcb
        trace.mean_d[i] = eval_d.mean
        trace.ucb_d[i] = eval_d.ucb
        trace.deployed_flag[i] = fired
        trace.oracle_rewards[i] = 0.0
    trace.deployments = list(state.deployments)
    return trace
