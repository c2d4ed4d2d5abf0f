"""Experiment runner and verification harness.

Subcommands:
  run             execute (environment × method × seeds × horizon) from a
                  config file plus flag overrides, emitting per-seed trace
                  CSVs, a tidy metrics CSV, an aggregate CSV, and a manifest.
  verify          run the oracle cross-check suites and print a report.
  make-synthetic  write the built-in synthetic datasets to svmlight files.

Exit codes: 0 ok, 1 config error, 2 runtime error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import ContextVector, InteractionLog, LoggedInteraction, reward_bound_b
from .data_io import (
    parse_ltr_svmlight,
    parse_svmlight,
    split_train_test,
    write_ltr_svmlight,
    write_svmlight,
)
from .environments import (
    ClassificationEnvironment,
    RankingEnvironment,
    click_profile,
    classification_reward,
    examination_probability,
    ExaminationModel,
    make_baseline,
    make_synthetic_classification,
    make_synthetic_ranking,
    reward_profile,
    simulate_clicks,
    NEAR_RANDOM_CLICKS,
    NEAR_RANDOM_REWARDS,
    PERFECT_CLICKS,
    POSITION_BIASED_CLICKS,
)
from .estimators import (
    ConfidenceParams,
    StreamingEstimatorState,
    aggregate_update,
    bsea_evaluate,
    confidence_bound,
    estimate_mean_fast,
    ips_point_terms,
    ranking_reward_bound,
)
from .evaluation import (
    average_reward_holdout,
    default_checkpoints,
    mean_ndcg,
)
from .learners import (
    LearnerConfig,
    epsilon_greedy_update,
    ips_sgd_update,
    lambda_ips_update,
    policy_gradient_update,
    ranksvm_pairwise_update,
    team_draft_interleave,
    dbgd_step,
)
from .policies import (
    EpsilonGreedyPolicy,
    LinearRanker,
    LinUcbState,
    SoftmaxLinearPolicy,
    ThompsonState,
    linucb_select,
    linucb_update,
    rank_candidates,
    sample_action,
    thompson_select,
    thompson_update,
)
from .safe_deploy import (
    ExperimentTrace,
    RankingSeaState,
    SeaState,
    baseline_rng,
    classification_round_source,
    logging_run,
    ranking_sea_run,
    sea_run,
    stream_rng,
    warm_started_learner,
)

CLASSIFICATION_METHODS = (
    "sea", "bsea", "ips", "lambda-ips", "eps-greedy", "boltzmann",
    "linucb", "thompson", "baseline-only",
)
RANKING_METHODS = ("sea", "bsea", "ranksvm-online", "dbgd", "baseline-only")
ALL_METHODS = tuple(dict.fromkeys(CLASSIFICATION_METHODS + RANKING_METHODS))

OUTPUT_ROOT_VAR = "SAFEBANDIT_OUTPUT_ROOT"


class ConfigError(Exception):
    """Invalid configuration; reported with exit code 1."""


@dataclass
class DatasetConfig:
    kind: str = "synthetic"  # synthetic | file
    data_seed: int = 0
    # classification synthetic
    n_classes: int = 10
    n_features: int = 20
    n_train: int = 2000
    n_test: int = 2000
    separation: float = 1.0
    # ranking synthetic
    n_queries: int = 200
    n_test_queries: int = 200
    docs_per_query: int = 25
    # file-backed
    train_file: Optional[str] = None
    test_file: Optional[str] = None
    test_fraction: float = 0.2


@dataclass
class ExperimentConfig:
    task: str = "classification"
    method: str = "sea"
    profile: str = "perfect"
    horizon: int = 10000
    seeds: tuple[int, ...] = (0,)
    checkpoints: Optional[tuple[int, ...]] = None
    delta: float = 0.05
    epsilon: float = 0.1
    bias_severity: float = 1.0
    baseline_fraction: float = 0.01
    temperature: float = 1.0
    linucb_alpha: float = 1.0
    thompson_nu2: float = 1.0
    learn_rate: Optional[float] = None  # None -> task default
    lambda_shift: float = 0.0
    dbgd_delta: float = 1.0
    dbgd_gamma: float = 0.01
    ranksvm_margin: float = 1.0
    output_dir: str = "runs/experiment"
    workers: int = 1
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def validate(self) -> None:
        if self.task not in ("classification", "ranking"):
            raise ConfigError(f"unknown task {self.task!r}")
        methods = CLASSIFICATION_METHODS if self.task == "classification" \
            else RANKING_METHODS
        if self.method not in ALL_METHODS:
            raise ConfigError(
                f"unknown method {self.method!r}; choose from {sorted(ALL_METHODS)}"
            )
        if self.method not in methods:
            raise ConfigError(
                f"method {self.method!r} does not apply to task {self.task!r}"
            )
        try:
            if self.task == "classification":
                reward_profile(self.profile)
            else:
                click_profile(self.profile)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie in (0, 1)")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in (0, 1]")
        if not 0.0 < self.baseline_fraction <= 1.0:
            raise ConfigError("baseline_fraction must lie in (0, 1]")
        if self.dataset.kind not in ("synthetic", "file"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind == "file" and not self.dataset.train_file:
            raise ConfigError("file datasets need train_file")
        if self.checkpoints is not None:
            pts = list(self.checkpoints)
            if any(b <= a for a, b in zip(pts, pts[1:])) or not pts:
                raise ConfigError("checkpoints must be strictly increasing")
            if pts[-1] > self.horizon or pts[0] < 1:
                raise ConfigError("checkpoints must lie within the horizon")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def resolved_learn_rate(self) -> float:
        if self.learn_rate is not None:
            return self.learn_rate
        return 0.01 if self.task == "classification" else 0.001

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(
            learn_rate=self.resolved_learn_rate(),
            lambda_shift=self.lambda_shift,
            dbgd_delta=self.dbgd_delta,
            dbgd_gamma=self.dbgd_gamma,
            ranksvm_margin=self.ranksvm_margin,
        )

    def resolved_checkpoints(self) -> list[int]:
        if self.checkpoints is not None:
            return list(self.checkpoints)
        return default_checkpoints(self.horizon)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        if self.checkpoints is not None:
            out["checkpoints"] = list(self.checkpoints)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = dict(raw)
        ds = data.pop("dataset", {})
        try:
            config = cls(**data, dataset=DatasetConfig(**ds))
        except TypeError as exc:
            raise ConfigError(f"bad config document: {exc}") from None
        config.seeds = tuple(int(s) for s in config.seeds)
        if config.checkpoints is not None:
            config.checkpoints = tuple(int(c) for c in config.checkpoints)
        return config


def _parse_int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.replace(" ", "").split(",") if tok)
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


_EXPERIMENT_FIELDS = {
    "task": str, "method": str, "profile": str, "horizon": int,
    "delta": float, "epsilon": float, "bias_severity": float,
    "baseline_fraction": float, "temperature": float, "linucb_alpha": float,
    "thompson_nu2": float, "output_dir": str, "workers": int,
}
_LEARNER_FIELDS = {
    "learn_rate": float, "lambda_shift": float, "dbgd_delta": float,
    "dbgd_gamma": float, "ranksvm_margin": float,
}
_DATASET_FIELDS = {
    "kind": str, "data_seed": int, "n_classes": int, "n_features": int,
    "n_train": int, "n_test": int, "separation": float, "n_queries": int,
    "n_test_queries": int, "docs_per_query": int, "train_file": str,
    "test_file": str, "test_fraction": float,
}


def load_config_file(path: str) -> ExperimentConfig:
    """Read an INI experiment file: [experiment], [learner], [dataset].

    Unknown sections or keys are errors, not warnings: a typo that silently
    fell back to a default would run a different experiment than intended.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    known = {
        "experiment": set(_EXPERIMENT_FIELDS) | {"seeds", "checkpoints"},
        "learner": set(_LEARNER_FIELDS),
        "dataset": set(_DATASET_FIELDS),
    }
    for name in parser.sections():
        if name not in known:
            raise ConfigError(f"{path}: unknown section [{name}]")
        for key in parser[name]:
            if key not in known[name]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{name}]")
    config = ExperimentConfig()
    try:
        if parser.has_section("experiment"):
            section = parser["experiment"]
            for key, cast in _EXPERIMENT_FIELDS.items():
                if key in section:
                    setattr(config, key, cast(section[key]))
            if "seeds" in section:
                config.seeds = _parse_int_list(section["seeds"])
            if "checkpoints" in section:
                config.checkpoints = _parse_int_list(section["checkpoints"])
        if parser.has_section("learner"):
            section = parser["learner"]
            for key, cast in _LEARNER_FIELDS.items():
                if key in section:
                    setattr(config, key, cast(section[key]))
        if parser.has_section("dataset"):
            section = parser["dataset"]
            for key, cast in _DATASET_FIELDS.items():
                if key in section:
                    setattr(config.dataset, key, cast(section[key]))
    except ValueError as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from None
    return config


def _apply_flag_overrides(config: ExperimentConfig,
                          args: argparse.Namespace) -> None:
    direct = {
        "task": "task", "method": "method", "profile": "profile",
        "horizon": "horizon", "delta": "delta", "epsilon": "epsilon",
        "bias_severity": "bias_severity",
        "baseline_fraction": "baseline_fraction", "temperature": "temperature",
        "linucb_alpha": "linucb_alpha", "thompson_nu2": "thompson_nu2",
        "learn_rate": "learn_rate", "lambda_shift": "lambda_shift",
        "dbgd_delta": "dbgd_delta", "dbgd_gamma": "dbgd_gamma",
        "ranksvm_margin": "ranksvm_margin", "output_dir": "output_dir",
        "workers": "workers",
    }
    for flag, attr in direct.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, attr, value)
    if getattr(args, "seeds", None) is not None:
        config.seeds = _parse_int_list(args.seeds)
    if getattr(args, "checkpoints", None) is not None:
        config.checkpoints = _parse_int_list(args.checkpoints)
    dataset = {
        "dataset_kind": "kind", "data_seed": "data_seed",
        "n_classes": "n_classes", "n_features": "n_features",
        "n_train": "n_train", "n_test": "n_test", "separation": "separation",
        "n_queries": "n_queries", "n_test_queries": "n_test_queries",
        "docs_per_query": "docs_per_query", "train_file": "train_file",
        "test_file": "test_file", "test_fraction": "test_fraction",
    }
    for flag, attr in dataset.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config.dataset, attr, value)


def build_environment(config: ExperimentConfig):
    ds = config.dataset
    if config.task == "classification":
        profile = reward_profile(config.profile)
        if ds.kind == "synthetic":
            return make_synthetic_classification(
                n_classes=ds.n_classes, n_features=ds.n_features,
                n_train=ds.n_train, n_test=ds.n_test,
                separation=ds.separation, profile=profile, seed=ds.data_seed,
            )
        with open(ds.train_file) as fp:
            instances, _ = parse_svmlight(fp)
        if ds.test_file:
            with open(ds.test_file) as fp:
                test, _ = parse_svmlight(fp)
            train = instances
        else:
            train, test = split_train_test(
                instances, ds.test_fraction, np.random.default_rng([ds.data_seed, 2])
            )
        return ClassificationEnvironment(train, test, profile)
    profile = click_profile(config.profile)
    model = ExaminationModel(bias_severity=config.bias_severity)
    if ds.kind == "synthetic":
        return make_synthetic_ranking(
            n_queries=ds.n_queries, n_test_queries=ds.n_test_queries,
            docs_per_query=ds.docs_per_query, n_features=ds.n_features,
            seed=ds.data_seed, bias_severity=config.bias_severity,
            profile=profile,
        )
    with open(ds.train_file) as fp:
        queries = parse_ltr_svmlight(fp)
    if ds.test_file:
        with open(ds.test_file) as fp:
            test_queries = parse_ltr_svmlight(fp)
        train_queries = queries
    else:
        train_queries, test_queries = split_train_test(
            queries, ds.test_fraction, np.random.default_rng([ds.data_seed, 2])
        )
    return RankingEnvironment(train_queries, test_queries, model, profile)


# --- per-seed execution --------------------------------------------------------


def _online_classification_run(select, update, source, T, rng
                               ) -> ExperimentTrace:
    """Generic online-baseline loop: select an action, observe, update."""
    trace = ExperimentTrace.empty(T)
    for i in range(T):
        x, reward_fn, oracle = source(rng)
        action, propensity = select(x, rng)
        reward = float(reward_fn(action))
        update(x, action, reward)
        trace.actions[i] = action
        trace.rewards[i] = reward
        trace.propensities[i] = propensity
        trace.oracle_rewards[i] = oracle
    return trace


def run_classification_seed(config: ExperimentConfig,
                            env: ClassificationEnvironment, seed: int
                            ) -> tuple[ExperimentTrace, object]:
    """One replication; returns the trace and the method's final artifact."""
    method = config.method
    cfg = config.learner_config()
    rng = stream_rng(seed)
    source = classification_round_source(env)
    n, m = env.n_actions, env.n_features
    baseline = make_baseline(env.train, config.baseline_fraction,
                             "classification", baseline_rng(seed),
                             epsilon=config.epsilon)
    if method in ("sea", "bsea"):
        params = ConfidenceParams(
            delta=config.delta,
            b=reward_bound_b(1.0, config.epsilon / n),
        )
        learner = warm_started_learner(baseline, uniform_mix=config.epsilon,
                                       temperature=config.temperature)
        state = SeaState(baseline, learner, params, mode=method, learner_cfg=cfg)
        state.pre_register_contexts(env.train)
        trace = sea_run(state, source, config.horizon, rng)
        return trace, state.learned
    if method == "baseline-only":
        trace = logging_run(baseline, source, config.horizon, rng)
        return trace, baseline
    if method in ("ips", "lambda-ips"):
        learner = warm_started_learner(baseline, uniform_mix=config.epsilon,
                                       temperature=config.temperature)
        update = ips_sgd_update if method == "ips" else lambda_ips_update
        trace = logging_run(baseline, source, config.horizon, rng,
                            learner=learner, update=update, learner_cfg=cfg)
        return trace, learner
    if method == "eps-greedy":
        policy = EpsilonGreedyPolicy(np.zeros((n, m)), config.epsilon)
        trace = _online_classification_run(
            lambda x, r: sample_action(policy, x, r),
            lambda x, a, rew: epsilon_greedy_update(policy, x, a, rew, cfg),
            source, config.horizon, rng,
        )
        return trace, policy
    if method == "boltzmann":
        policy = SoftmaxLinearPolicy.uniform(n, m, temperature=config.temperature)
        trace = _online_classification_run(
            lambda x, r: sample_action(policy, x, r),
            lambda x, a, rew: policy_gradient_update(policy, x, a, rew, cfg),
            source, config.horizon, rng,
        )
        return trace, policy
    if method == "linucb":
        state = LinUcbState(n, m, alpha=config.linucb_alpha)
        trace = _online_classification_run(
            lambda x, r: (linucb_select(state, x), 1.0),
            lambda x, a, rew: linucb_update(state, x, a, rew),
            source, config.horizon, rng,
        )
        return trace, state
    if method == "thompson":
        state = ThompsonState(n, m, nu2=config.thompson_nu2)
        trace = _online_classification_run(
            lambda x, r: (thompson_select(state, x, r), 1.0),
            lambda x, a, rew: thompson_update(state, x, a, rew),
            source, config.horizon, rng,
        )
        return trace, state
    raise ConfigError(f"method {method!r} does not apply to classification")


def run_ranking_seed(config: ExperimentConfig, env: RankingEnvironment,
                     seed: int) -> tuple[ExperimentTrace, LinearRanker]:
    from .estimators import rank_weight

    method = config.method
    cfg = config.learner_config()
    rng = stream_rng(seed)
    baseline = make_baseline(env.queries, config.baseline_fraction, "ranking",
                             baseline_rng(seed))
    if method in ("sea", "bsea"):
        params = ConfidenceParams(
            delta=config.delta, b=ranking_reward_bound(config.bias_severity)
        )
        state = RankingSeaState(baseline, params, mode=method, learner_cfg=cfg)
        trace = ranking_sea_run(state, env, config.horizon, rng)
        return trace, state.learned

    trace = ExperimentTrace.empty(config.horizon)
    trace.propensities[:] = 1.0

    def record_round(i, query, clicks):
        key = query.query_key
        trace.actions[i] = key if key is not None else -1
        trace.rewards[i] = sum(rank_weight(c.rank) for c in clicks if c.clicked)

    if method == "baseline-only":
        ranker = baseline
        for i in range(config.horizon):
            query = env.draw_query(rng)
            displayed = rank_candidates(ranker, query.doc_features)
            clicks = simulate_clicks(displayed, query.grades, env.model,
                                     env.profile, rng)
            record_round(i, query, clicks)
        return trace, ranker
    if method == "ranksvm-online":
        ranker = LinearRanker.zeros(env.n_features)
        for i in range(config.horizon):
            query = env.draw_query(rng)
            displayed = rank_candidates(ranker, query.doc_features)
            clicks = simulate_clicks(displayed, query.grades, env.model,
                                     env.profile, rng)
            ranksvm_pairwise_update(ranker, clicks, query.doc_features, cfg)
            record_round(i, query, clicks)
        return trace, ranker
    if method == "dbgd":
        ranker = LinearRanker.zeros(env.n_features)
        for i in range(config.horizon):
            query = env.draw_query(rng)

            def user_model(displayed):
                return simulate_clicks(displayed, query.grades, env.model,
                                       env.profile, rng)

            ranker, _, clicks = dbgd_step(ranker, query.doc_features,
                                          user_model, rng, cfg)
            record_round(i, query, clicks)
        return trace, ranker
    raise ConfigError(f"method {method!r} does not apply to ranking")


def run_seed(config: ExperimentConfig, env, seed: int):
    if config.task == "classification":
        return run_classification_seed(config, env, seed)
    return run_ranking_seed(config, env, seed)


def _holdout_metric(config: ExperimentConfig, env, artifact
                    ) -> Optional[tuple[str, float]]:
    if config.task == "classification":
        if not env.test:
            return None
        return "holdout_reward", average_reward_holdout(artifact, env.test,
                                                        env.profile)
    if not env.test_queries:
        return None
    return "ndcg@10", mean_ndcg(artifact, env.test_queries)


def _seed_worker(config_dict: dict, seed: int):
    """Worker entry point: rebuilds the environment deterministically."""
    config = ExperimentConfig.from_dict(config_dict)
    env = build_environment(config)
    trace, artifact = run_seed(config, env, seed)
    holdout = _holdout_metric(config, env, artifact)
    return trace, holdout


# --- artifact emission ----------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def write_trace_csv(path: Path, trace: ExperimentTrace) -> None:
    cumulative = trace.cumulative_rewards()
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(
            ["t", "action", "reward", "propensity", "mean_w", "lcb_w",
             "mean_d", "ucb_d", "deployed_flag", "cumulative_reward"]
        )
        for i in range(trace.t):
            writer.writerow([
                i + 1,
                int(trace.actions[i]),
                _fmt(trace.rewards[i]),
                _fmt(trace.propensities[i]),
                _fmt(trace.mean_w[i]),
                _fmt(trace.lcb_w[i]),
                _fmt(trace.mean_d[i]),
                _fmt(trace.ucb_d[i]),
                int(trace.deployed_flag[i]),
                _fmt(cumulative[i]),
            ])


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def resolve_output_dir(config: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_VAR, "."))
    path = Path(config.output_dir)
    return path if path.is_absolute() else root / path


def run_experiment(config: ExperimentConfig) -> int:
    """Execute every seed, write artifacts; returns the process exit code."""
    config.validate()
    out_dir = resolve_output_dir(config)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoints = config.resolved_checkpoints()
    config_dict = config.to_dict()

    results = []
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_seed_worker, config_dict, seed)
                       for seed in config.seeds]
            results = [f.result() for f in futures]
    else:
        env = build_environment(config)
        for seed in config.seeds:
            trace, artifact = run_seed(config, env, seed)
            results.append((trace, _holdout_metric(config, env, artifact)))

    metric_rows: list[tuple[str, int, int, str, float]] = []
    for seed, (trace, holdout) in zip(config.seeds, results):
        write_trace_csv(out_dir / f"trace_seed{seed}.csv", trace)
        cumulative = trace.cumulative_rewards()
        oracle_cum = np.cumsum(trace.oracle_rewards)
        for t in checkpoints:
            metric_rows.append(
                (config.method, seed, t, "cumulative_reward",
                 float(cumulative[t - 1]))
            )
            if config.task == "classification":
                metric_rows.append(
                    (config.method, seed, t, "regret",
                     float(oracle_cum[t - 1] - cumulative[t - 1]))
                )
        if holdout is not None:
            metric_rows.append(
                (config.method, seed, config.horizon, holdout[0], holdout[1])
            )
        if config.method in ("sea", "bsea"):
            first = trace.first_deployment_round()
            metric_rows.append(
                (config.method, seed, config.horizon, "first_deployment_round",
                 float(first) if first is not None else -1.0)
            )

    with open(out_dir / "metrics.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["method", "seed", "checkpoint", "metric", "value"])
        for method, seed, t, metric, value in metric_rows:
            writer.writerow([method, seed, t, metric, _fmt(value)])

    grouped: dict[tuple[int, str], list[float]] = {}
    for _, _, t, metric, value in metric_rows:
        grouped.setdefault((t, metric), []).append(value)
    with open(out_dir / "aggregate.csv", "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["method", "checkpoint", "metric", "mean", "std"])
        for (t, metric), values in sorted(grouped.items()):
            arr = np.asarray(values)
            std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            writer.writerow(
                [config.method, t, metric, _fmt(float(arr.mean())), _fmt(std)]
            )

    manifest = {
        "version": __version__,
        "git": _git_describe(),
        "config": config_dict,
        "seeds": list(config.seeds),
        "artifacts": sorted(
            p.name for p in out_dir.iterdir() if p.suffix == ".csv"
        ),
    }
    with open(out_dir / "manifest.json", "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return 0


# --- verification suites --------------------------------------------------------


def _check(name: str, tolerance, observed, passed: bool) -> dict:
    return {"check": name, "tolerance": tolerance,
            "observed": observed, "passed": bool(passed)}


def _random_log(rng: np.random.Generator, n_actions: int, n_contexts: int,
                t: int, m: int = 6) -> InteractionLog:
    contexts = rng.standard_normal((n_contexts, m))
    log = InteractionLog()
    for _ in range(t):
        key = int(rng.integers(0, n_contexts))
        action = int(rng.integers(0, n_actions))
        reward = float(rng.random())
        propensity = float(rng.uniform(0.05, 1.0))
        log.append(LoggedInteraction(
            context=ContextVector(contexts[key], dedup_key=key),
            action=action, reward=reward, propensity=propensity,
        ))
    return log


def _suite_estimators() -> list[dict]:
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        log = _random_log(rng, n_actions=8, n_contexts=30, t=2000)
        policy = SoftmaxLinearPolicy(rng.standard_normal((8, 6)))
        state = StreamingEstimatorState(8)
        for item in log:
            aggregate_update(state, item)
        fast = estimate_mean_fast(state, policy)
        naive = float(ips_point_terms(log, policy).mean())
        worst = max(worst, abs(fast - naive))
    checks = [_check("fast_vs_naive_mean(100 random logs)", 1e-9, worst,
                     worst <= 1e-9)]
    table_gap = abs(
        sum(state.table_entries().values())
        - float((log.rewards() / log.propensities()).sum())
    )
    checks.append(_check("aggregate_table_total_vs_log", 1e-9, table_gap,
                         table_gap <= 1e-9))
    ev = bsea_evaluate(log, policy)
    checks.append(_check("boundless_interval_collapses", 0.0,
                         max(abs(ev.lcb - ev.mean), abs(ev.ucb - ev.mean)),
                         ev.lcb == ev.mean == ev.ucb))
    return checks


def _suite_bounds() -> list[dict]:
    params = ConfidenceParams(delta=0.05, b=1.0)
    equal_terms = confidence_bound([0.3, 0.3], params)
    expected = 7.0 * math.log(40.0) / 3.0
    checks = [_check("equal_terms_bound", 1e-9, abs(equal_terms - expected),
                     abs(equal_terms - expected) <= 1e-9)]
    mixed = confidence_bound([0.0, 1.0], params)
    expected_mixed = expected + 0.5 * math.sqrt(math.log(40.0) * 2.0)
    checks.append(_check("two_term_mixed_bound", 1e-9,
                         abs(mixed - expected_mixed),
                         abs(mixed - expected_mixed) <= 1e-9))
    try:
        confidence_bound([1.0], params)
        undefined_ok = False
    except ValueError:
        undefined_ok = True
    checks.append(_check("bound_undefined_below_t2", None, undefined_ok,
                         undefined_ok))
    rng = np.random.default_rng(5)
    draws = rng.random(4000)
    radii = [confidence_bound(draws[:t], params) for t in (100, 400, 1600, 4000)]
    monotone = all(b <= a for a, b in zip(radii, radii[1:]))
    checks.append(_check("bound_shrinks_with_t", None, radii, monotone))
    return checks


def _finite_difference(policy: SoftmaxLinearPolicy, objective, h: float = 1e-6
                       ) -> np.ndarray:
    grad = np.zeros_like(policy.weights)
    for k in range(policy.weights.shape[0]):
        for j in range(policy.weights.shape[1]):
            policy.weights[k, j] += h
            up = objective()
            policy.weights[k, j] -= 2 * h
            down = objective()
            policy.weights[k, j] += h
            grad[k, j] = (up - down) / (2 * h)
    return grad


def _suite_gradients() -> list[dict]:
    rng = np.random.default_rng(33)
    cfg = LearnerConfig(learn_rate=1.0, lambda_shift=0.3)
    worst = {"ips": 0.0, "lambda_ips": 0.0, "policy_gradient": 0.0}
    for _ in range(30):
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 5))
        W = rng.standard_normal((n, m))
        x = ContextVector(rng.standard_normal(m))
        a = int(rng.integers(0, n))
        r = float(rng.random())
        p = float(rng.uniform(0.1, 1.0))
        item = LoggedInteraction(context=x, action=a, reward=r, propensity=p)

        policy = SoftmaxLinearPolicy(W.copy())
        step = ips_sgd_update(policy, item, cfg).weights - W
        probe = SoftmaxLinearPolicy(W.copy())
        fd = _finite_difference(probe, lambda: (r / p) * probe.probability(x, a))
        worst["ips"] = max(worst["ips"], _relative_gap(step, fd))

        policy = SoftmaxLinearPolicy(W.copy())
        step = lambda_ips_update(policy, item, cfg).weights - W
        probe = SoftmaxLinearPolicy(W.copy())
        fd = _finite_difference(
            probe, lambda: ((r - cfg.lambda_shift) / p) * probe.probability(x, a)
        )
        worst["lambda_ips"] = max(worst["lambda_ips"], _relative_gap(step, fd))

        policy = SoftmaxLinearPolicy(W.copy())
        step = policy_gradient_update(policy, x, a, max(r, 0.05), cfg).weights - W
        probe = SoftmaxLinearPolicy(W.copy())
        fd = _finite_difference(
            probe, lambda: max(r, 0.05) * math.log(probe.probability(x, a))
        )
        worst["policy_gradient"] = max(worst["policy_gradient"],
                                       _relative_gap(step, fd))
    return [
        _check(f"{name}_matches_finite_differences", 1e-5, gap, gap <= 1e-5)
        for name, gap in worst.items()
    ]


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-12)
    return float(np.linalg.norm(a - b)) / scale


class _ScriptedCoins:
    """Deterministic stand-in for the interleaving coin flips."""

    def __init__(self, bits: Sequence[int]) -> None:
        self._bits = list(bits)

    def integers(self, low: int, high: int) -> int:
        return self._bits.pop(0)


def _suite_interleaving() -> list[dict]:
    from itertools import product

    from .core import RankedList

    rng = np.random.default_rng(77)
    failures = 0
    cases = 0
    for k in range(2, 7):
        scores = np.arange(k, 0, -1, dtype=float)
        list_a = RankedList(rng.permutation(k), scores)
        list_b = RankedList(rng.permutation(k), scores)
        for bits in product((0, 1), repeat=k):
            merged, teams = team_draft_interleave(list_a, list_b,
                                                  _ScriptedCoins(bits))
            cases += 1
            if sorted(merged.doc_ids.tolist()) != list(range(k)):
                failures += 1
            elif abs(int((teams == 0).sum()) - int((teams == 1).sum())) > 1:
                failures += 1
    return [_check("team_draft_permutation_and_balance", 0, failures,
                   failures == 0),
            _check("team_draft_cases_enumerated", None, cases, cases > 0)]


def _suite_environments() -> list[dict]:
    checks = []
    checks.append(_check(
        "click_profile_constants", 0.0,
        [PERFECT_CLICKS.probs, POSITION_BIASED_CLICKS.probs,
         NEAR_RANDOM_CLICKS.probs],
        PERFECT_CLICKS.probs == (0.00, 0.20, 0.40, 0.80, 1.00)
        and POSITION_BIASED_CLICKS.probs == (0.10, 0.10, 0.10, 1.00, 1.00)
        and NEAR_RANDOM_CLICKS.probs == (0.40, 0.45, 0.50, 0.55, 0.60),
    ))
    checks.append(_check(
        "near_random_reward_constants", 0.0,
        (NEAR_RANDOM_REWARDS.p_correct, NEAR_RANDOM_REWARDS.p_incorrect),
        NEAR_RANDOM_REWARDS.p_correct == 0.6
        and NEAR_RANDOM_REWARDS.p_incorrect == 0.4,
    ))
    model = ExaminationModel(bias_severity=1.0)
    exam_ok = (
        examination_probability(model, 1) == 1.0
        and examination_probability(model, 2) == 0.5
        and examination_probability(model, 3) == 1.0 / 3.0
        and examination_probability(model, 11) == 0.0
    )
    checks.append(_check("examination_probability_eta1", 0.0, exam_ok, exam_ok))
    rng = np.random.default_rng(4)
    draws = 20000
    hits = sum(
        classification_reward(0, 0, NEAR_RANDOM_REWARDS, rng)
        for _ in range(draws)
    )
    rate = hits / draws
    sigma = math.sqrt(0.6 * 0.4 / draws)
    checks.append(_check("near_random_correct_rate_mc", f"0.6 ± {4*sigma:.4f}",
                         rate, abs(rate - 0.6) <= 4 * sigma))
    return checks


def _suite_safety() -> list[dict]:
    env = make_synthetic_classification(
        n_classes=5, n_features=10, n_train=300, n_test=300,
        separation=2.0, profile="perfect", seed=7,
    )
    checks = []
    violations = 0
    deployments = 0
    identity_ok = True
    for seed in (0, 1, 2):
        baseline = make_baseline(env.train, 0.05, "classification",
                                 baseline_rng(seed), epsilon=0.2)
        params = ConfidenceParams(
            delta=0.05, b=reward_bound_b(1.0, 0.2 / env.n_actions)
        )
        state = SeaState(baseline,
                         warm_started_learner(baseline, uniform_mix=0.2),
                         params, mode="sea",
                         learner_cfg=LearnerConfig(learn_rate=0.05))
        state.pre_register_contexts(env.train)
        source = classification_round_source(env)
        trace = sea_run(state, source, 4000, stream_rng(seed))
        ref = logging_run(baseline, classification_round_source(env), 4000,
                          stream_rng(seed))
        first = trace.first_deployment_round()
        horizon = first - 1 if first is not None else trace.t
        if not np.array_equal(trace.actions[:horizon], ref.actions[:horizon]):
            identity_ok = False
        for record in state.deployments:
            deployments += 1
            new = env.true_expected_reward(record.policy)
            old = env.true_expected_reward(record.replaced)
            if new + 1e-12 < old:
                violations += 1
    checks.append(_check("deployments_never_degrade_truth", 0, violations,
                         violations == 0))
    checks.append(_check("deployments_observed", None, deployments, True))
    checks.append(_check("pre_deployment_stream_identity", None, identity_ok,
                         identity_ok))
    return checks


VERIFY_SUITES = {
    "estimators": _suite_estimators,
    "bounds": _suite_bounds,
    "gradients": _suite_gradients,
    "interleaving": _suite_interleaving,
    "environments": _suite_environments,
    "safety": _suite_safety,
}


def verify(suite_name: str) -> int:
    """Run one (or all) oracle suites; print a JSON report; exit 0 or 3."""
    if suite_name == "all":
        names = list(VERIFY_SUITES)
    elif suite_name in VERIFY_SUITES:
        names = [suite_name]
    else:
        print(
            f"unknown suite {suite_name!r}; available: "
            + ", ".join(sorted(VERIFY_SUITES) + ["all"]),
            file=sys.stderr,
        )
        return 1
    report = {}
    all_passed = True
    for name in names:
        checks = VERIFY_SUITES[name]()
        report[name] = checks
        all_passed &= all(c["passed"] for c in checks)
    print(json.dumps({"suites": report, "passed": all_passed}, indent=2,
                     default=str))
    return 0 if all_passed else 3


# --- make-synthetic -------------------------------------------------------------


def make_synthetic_files(config: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = config.dataset
    if config.task == "classification":
        env = make_synthetic_classification(
            n_classes=ds.n_classes, n_features=ds.n_features,
            n_train=ds.n_train, n_test=ds.n_test, separation=ds.separation,
            seed=ds.data_seed,
        )
        with open(out_dir / "train.svmlight", "w") as fp:
            write_svmlight(env.train, fp)
        with open(out_dir / "test.svmlight", "w") as fp:
            write_svmlight(env.test, fp)
        meta = {"task": "classification", "n_classes": ds.n_classes,
                "n_features": ds.n_features, "n_train": ds.n_train,
                "n_test": ds.n_test, "separation": ds.separation,
                "data_seed": ds.data_seed}
    else:
        env = make_synthetic_ranking(
            n_queries=ds.n_queries, n_test_queries=ds.n_test_queries,
            docs_per_query=ds.docs_per_query, n_features=ds.n_features,
            seed=ds.data_seed, bias_severity=config.bias_severity,
        )
        with open(out_dir / "train.ltr", "w") as fp:
            write_ltr_svmlight(env.queries, fp)
        with open(out_dir / "test.ltr", "w") as fp:
            write_ltr_svmlight(env.test_queries, fp)
        meta = {"task": "ranking", "n_queries": ds.n_queries,
                "n_test_queries": ds.n_test_queries,
                "docs_per_query": ds.docs_per_query,
                "n_features": ds.n_features, "data_seed": ds.data_seed}
    with open(out_dir / "meta.json", "w") as fp:
        json.dump(meta, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return 0


# --- argument parsing -----------------------------------------------------------


def _add_override_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--task", choices=["classification", "ranking"])
    parser.add_argument("--method", type=str)
    parser.add_argument("--profile", type=str)
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--seeds", type=str, help="comma-separated, e.g. 0,1,2")
    parser.add_argument("--checkpoints", type=str, help="comma-separated rounds")
    parser.add_argument("--delta", type=float)
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--bias-severity", dest="bias_severity", type=float)
    parser.add_argument("--baseline-fraction", dest="baseline_fraction",
                        type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--linucb-alpha", dest="linucb_alpha", type=float)
    parser.add_argument("--thompson-nu2", dest="thompson_nu2", type=float)
    parser.add_argument("--learn-rate", dest="learn_rate", type=float)
    parser.add_argument("--lambda-shift", dest="lambda_shift", type=float)
    parser.add_argument("--dbgd-delta", dest="dbgd_delta", type=float)
    parser.add_argument("--dbgd-gamma", dest="dbgd_gamma", type=float)
    parser.add_argument("--ranksvm-margin", dest="ranksvm_margin", type=float)
    parser.add_argument("--output-dir", dest="output_dir", type=str)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--dataset-kind", dest="dataset_kind",
                        choices=["synthetic", "file"])
    parser.add_argument("--data-seed", dest="data_seed", type=int)
    parser.add_argument("--n-classes", dest="n_classes", type=int)
    parser.add_argument("--n-features", dest="n_features", type=int)
    parser.add_argument("--n-train", dest="n_train", type=int)
    parser.add_argument("--n-test", dest="n_test", type=int)
    parser.add_argument("--separation", type=float)
    parser.add_argument("--n-queries", dest="n_queries", type=int)
    parser.add_argument("--n-test-queries", dest="n_test_queries", type=int)
    parser.add_argument("--docs-per-query", dest="docs_per_query", type=int)
    parser.add_argument("--train-file", dest="train_file", type=str)
    parser.add_argument("--test-file", dest="test_file", type=str)
    parser.add_argument("--test-fraction", dest="test_fraction", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safebandit",
        description="Safe exploration experiments for contextual bandits",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment grid")
    run_p.add_argument("--config", type=str, help="INI experiment file")
    run_p.add_argument("--from-manifest", dest="from_manifest", type=str,
                       help="rerun the configuration echoed in a manifest")
    _add_override_flags(run_p)

    verify_p = sub.add_parser("verify", help="run oracle cross-checks")
    verify_p.add_argument("suite", nargs="?", default="all",
                          help="one of: " + ", ".join(sorted(VERIFY_SUITES))
                          + ", all")

    synth_p = sub.add_parser("make-synthetic",
                             help="emit built-in synthetic datasets")
    synth_p.add_argument("--out", type=str, required=True)
    _add_override_flags(synth_p)
    return parser


def resolve_run_config(args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "from_manifest", None):
        with open(args.from_manifest) as fp:
            manifest = json.load(fp)
        config = ExperimentConfig.from_dict(manifest["config"])
    elif getattr(args, "config", None):
        config = load_config_file(args.config)
    else:
        config = ExperimentConfig()
    _apply_flag_overrides(config, args)
    config.validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            config = resolve_run_config(args)
            return run_experiment(config)
        if args.command == "verify":
            return verify(args.suite)
        if args.command == "make-synthetic":
            config = ExperimentConfig()
            _apply_flag_overrides(config, args)
            if config.task not in ("classification", "ranking"):
                raise ConfigError(f"unknown task {config.task!r}")
            return make_synthetic_files(config, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime diagnostics at the edge
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
