"""Safe exploration for contextual bandits.

Learn from logged bandit feedback with inverse-propensity scoring, bound the
off-policy estimates with empirical-Bernstein confidence intervals, and only
deploy a learned policy once its lower confidence bound clears the deployed
policy's upper bound.
"""

__version__ = "0.1.0"

from .core import (
    ActionId,
    ClickRecord,
    ContextVector,
    InteractionLog,
    LoggedInteraction,
    RankedList,
    RankingInteraction,
    RewardBounds,
    log_append,
    reward_bound_b,
)
from .policies import (
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
from .estimators import (
    ConfidenceParams,
    PolicyEvaluation,
    RankingEstimatorState,
    StreamingEstimatorState,
    aggregate_update,
    bsea_evaluate,
    bsea_evaluate_fast,
    confidence_bound,
    estimate_mean_fast,
    evaluate_policy,
    evaluate_policy_fast,
    ips_point_terms,
    rank_weight,
    ranking_evaluate,
    ranking_ips_estimate,
    ranking_reward_bound,
)
from .learners import (
    LearnerConfig,
    counterfactual_ranksvm_update,
    dbgd_step,
    epsilon_greedy_update,
    ips_sgd_update,
    lambda_ips_update,
    policy_gradient_update,
    ranksvm_pairwise_update,
    team_draft_interleave,
)
from .data_io import (
    ClassificationInstance,
    DatasetMeta,
    RankingQuery,
    parse_ltr_svmlight,
    parse_svmlight,
    split_train_test,
    subsample,
    write_ltr_svmlight,
    write_svmlight,
)
from .environments import (
    ClassificationEnvironment,
    ClickProfile,
    ExaminationModel,
    RankingEnvironment,
    RewardProfile,
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
from .evaluation import (
    MetricSeries,
    average_reward_holdout,
    cumulative_reward,
    default_checkpoints,
    greedy_score_matrix,
    holdout_accuracy,
    mean_ndcg,
    ndcg_at_k,
    regret,
    welch_t_test,
)
from .safe_deploy import (
    DeploymentRecord,
    ExperimentTrace,
    RankingSeaState,
    SeaState,
    baseline_rng,
    classification_round_source,
    deployment_check,
    logging_run,
    ranking_sea_run,
    sea_round,
    sea_run,
    stream_rng,
    warm_started_learner,
)

__all__ = [
    "ActionId",
    "ClassificationEnvironment",
    "ClassificationInstance",
    "ClickProfile",
    "ClickRecord",
    "ConfidenceParams",
    "ContextVector",
    "DatasetMeta",
    "DeploymentRecord",
    "EpsilonGreedyPolicy",
    "ExaminationModel",
    "ExperimentTrace",
    "InteractionLog",
    "LearnerConfig",
    "LinUcbState",
    "LinearRanker",
    "LoggedInteraction",
    "MetricSeries",
    "PolicyEvaluation",
    "RankedList",
    "RankingEnvironment",
    "RankingEstimatorState",
    "RankingInteraction",
    "RankingQuery",
    "RankingSeaState",
    "RewardBounds",
    "RewardProfile",
    "SeaState",
    "SoftmaxLinearPolicy",
    "StreamingEstimatorState",
    "ThompsonState",
    "aggregate_update",
    "average_reward_holdout",
    "baseline_rng",
    "bsea_evaluate",
    "bsea_evaluate_fast",
    "classification_reward",
    "classification_round",
    "classification_round_source",
    "click_profile",
    "confidence_bound",
    "counterfactual_ranksvm_update",
    "cumulative_reward",
    "dbgd_step",
    "default_checkpoints",
    "deployment_check",
    "epsilon_greedy_update",
    "estimate_mean_fast",
    "evaluate_policy",
    "evaluate_policy_fast",
    "examination_probability",
    "greedy_score_matrix",
    "holdout_accuracy",
    "ips_point_terms",
    "ips_sgd_update",
    "lambda_ips_update",
    "linucb_select",
    "linucb_update",
    "log_append",
    "logging_run",
    "make_baseline",
    "make_synthetic_classification",
    "make_synthetic_ranking",
    "mean_ndcg",
    "ndcg_at_k",
    "parse_ltr_svmlight",
    "parse_svmlight",
    "policy_from_json",
    "policy_gradient_update",
    "policy_to_json",
    "rank_candidates",
    "rank_weight",
    "ranking_evaluate",
    "ranking_ips_estimate",
    "ranking_reward_bound",
    "ranking_round",
    "ranking_sea_run",
    "ranksvm_pairwise_update",
    "regret",
    "reward_bound_b",
    "reward_profile",
    "sample_action",
    "sea_round",
    "sea_run",
    "split_train_test",
    "stream_rng",
    "subsample",
    "team_draft_interleave",
    "thompson_select",
    "thompson_update",
    "warm_started_learner",
    "welch_t_test",
    "write_ltr_svmlight",
    "write_svmlight",
]
