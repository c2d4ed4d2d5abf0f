import csv
import json

import pytest

from safebandit.cli import main
from safebandit.data_io import parse_ltr_svmlight, parse_svmlight


def run_cli(*args):
    return main(list(args))


def small_run_args(out_dir, method="baseline-only", seeds="0,1,2",
                   horizon="400"):
    return [
        "run", "--task", "classification", "--method", method,
        "--profile", "perfect", "--horizon", horizon, "--seeds", seeds,
        "--n-classes", "4", "--n-features", "6", "--n-train", "200",
        "--n-test", "200", "--baseline-fraction", "0.05",
        "--output-dir", str(out_dir),
    ]


def read_csv(path):
    with open(path, newline="") as fp:
        return list(csv.reader(fp))


class TestRunCommand:
    def test_emits_one_trace_per_seed_plus_summaries(self, tmp_path):
        out = tmp_path / "exp"
        assert run_cli(*small_run_args(out)) == 0
        names = sorted(p.name for p in out.iterdir())
        assert names == ["aggregate.csv", "manifest.json", "metrics.csv",
                         "trace_seed0.csv", "trace_seed1.csv",
                         "trace_seed2.csv"]

    def test_trace_schema_and_length(self, tmp_path):
        out = tmp_path / "exp"
        run_cli(*small_run_args(out, seeds="0", horizon="250"))
        rows = read_csv(out / "trace_seed0.csv")
        assert rows[0] == ["t", "action", "reward", "propensity", "mean_w",
                           "lcb_w", "mean_d", "ucb_d", "deployed_flag",
                           "cumulative_reward"]
        assert len(rows) == 251
        assert [r[0] for r in rows[1:]] == [str(t) for t in range(1, 251)]

    def test_metrics_cover_checkpoints_and_seeds(self, tmp_path):
        out = tmp_path / "exp"
        run_cli(*small_run_args(out, seeds="0,1", horizon="400"))
        rows = read_csv(out / "metrics.csv")[1:]
        cum = [(r[1], r[2]) for r in rows if r[3] == "cumulative_reward"]
        # Checkpoints default to powers of ten capped by the horizon.
        assert set(cum) == {(s, t) for s in ("0", "1")
                            for t in ("10", "100", "400")}
        assert all(r[0] == "baseline-only" for r in rows)

    def test_reruns_are_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_cli(*small_run_args(out_a))
        run_cli(*small_run_args(out_b))
        for name in ("trace_seed0.csv", "trace_seed2.csv", "metrics.csv",
                     "aggregate.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_manifest_reruns_reproduce_aggregates(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        run_cli(*small_run_args(out_a))
        assert run_cli("run", "--from-manifest", str(out_a / "manifest.json"),
                       "--output-dir", str(out_b)) == 0
        assert ((out_a / "aggregate.csv").read_bytes()
                == (out_b / "aggregate.csv").read_bytes())

    def test_manifest_echoes_resolved_config(self, tmp_path):
        out = tmp_path / "exp"
        run_cli(*small_run_args(out, seeds="0"))
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["method"] == "baseline-only"
        assert manifest["config"]["horizon"] == 400
        assert manifest["seeds"] == [0]
        assert "trace_seed0.csv" in manifest["artifacts"]

    def test_guarded_run_shares_the_baseline_stream(self, tmp_path):
        # At this horizon the confidence interval is still far too wide to
        # deploy, so the guarded run must equal the baseline-only run
        # row for row.
        out_sea, out_base = tmp_path / "sea", tmp_path / "base"
        run_cli(*small_run_args(out_sea, method="sea", seeds="0,1",
                                horizon="500"))
        run_cli(*small_run_args(out_base, method="baseline-only", seeds="0,1",
                                horizon="500"))
        for seed in (0, 1):
            sea_rows = read_csv(out_sea / f"trace_seed{seed}.csv")[1:]
            base_rows = read_csv(out_base / f"trace_seed{seed}.csv")[1:]
            assert all(r[8] == "0" for r in sea_rows)  # never deployed
            sea_cum = [r[9] for r in sea_rows]
            base_cum = [r[9] for r in base_rows]
            assert sea_cum == base_cum
            assert [r[1] for r in sea_rows] == [r[1] for r in base_rows]

    def test_guarded_run_records_first_deployment_metric(self, tmp_path):
        out = tmp_path / "exp"
        run_cli(*small_run_args(out, method="sea", seeds="0", horizon="300"))
        rows = read_csv(out / "metrics.csv")[1:]
        firsts = [r for r in rows if r[3] == "first_deployment_round"]
        assert len(firsts) == 1
        assert firsts[0][4] == "-1"  # vacuous bound: no deployment yet


class TestRunValidation:
    def test_unknown_method_exits_one_without_artifacts(self, tmp_path, capsys):
        out = tmp_path / "exp"
        code = run_cli(*small_run_args(out, method="oracle-greedy"))
        assert code == 1
        assert not out.exists()
        assert "config error" in capsys.readouterr().err

    def test_ranking_method_rejected_for_classification(self, tmp_path):
        assert run_cli(*small_run_args(tmp_path / "x", method="dbgd")) == 1

    def test_bad_delta_exits_one(self, tmp_path):
        args = small_run_args(tmp_path / "x") + ["--delta", "1.5"]
        assert run_cli(*args) == 1

    def test_missing_config_file_exits_one(self, tmp_path):
        assert run_cli("run", "--config", str(tmp_path / "nope.ini")) == 1

    def test_missing_train_file_exits_one(self, tmp_path):
        args = small_run_args(tmp_path / "x") + [
            "--dataset-kind", "file", "--train-file",
            str(tmp_path / "absent.svmlight"),
        ]
        assert run_cli(*args) == 1


class TestConfigFile:
    def test_flags_override_config_file(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text(
            "[experiment]\n"
            "task = classification\n"
            "method = baseline-only\n"
            "horizon = 500\n"
            "seeds = 0\n"
            "[dataset]\n"
            "n_classes = 4\n"
            "n_features = 6\n"
            "n_train = 200\n"
            "n_test = 200\n"
        )
        out = tmp_path / "exp"
        assert run_cli("run", "--config", str(ini), "--horizon", "120",
                       "--output-dir", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["horizon"] == 120
        assert manifest["config"]["dataset"]["n_classes"] == 4
        rows = read_csv(out / "trace_seed0.csv")
        assert len(rows) == 121

    def test_unknown_config_key_rejected(self, tmp_path):
        ini = tmp_path / "exp.ini"
        ini.write_text("[experiment]\nhorizn = 10\n")
        assert run_cli("run", "--config", str(ini)) == 1


class TestVerifyCommand:
    def test_bounds_suite_passes_and_reports_json(self, capsys):
        assert run_cli("verify", "bounds") == 0
        report = json.loads(capsys.readouterr().out)
        assert report["passed"] is True
        assert set(report["suites"]) == {"bounds"}
        assert all(c["passed"] for c in report["suites"]["bounds"])

    def test_estimator_and_gradient_suites_pass(self, capsys):
        assert run_cli("verify", "estimators") == 0
        assert run_cli("verify", "gradients") == 0
        assert run_cli("verify", "interleaving") == 0

    def test_unknown_suite_lists_the_options(self, capsys):
        assert run_cli("verify", "thermodynamics") == 1
        err = capsys.readouterr().err
        assert "bounds" in err and "safety" in err


class TestMakeSynthetic:
    def test_classification_files_parse_back(self, tmp_path):
        out = tmp_path / "data"
        assert run_cli("make-synthetic", "--out", str(out),
                       "--task", "classification", "--n-classes", "3",
                       "--n-features", "5", "--n-train", "60",
                       "--n-test", "30") == 0
        meta = json.loads((out / "meta.json").read_text())
        assert meta["n_classes"] == 3
        with open(out / "train.svmlight") as fp:
            train, parsed_meta = parse_svmlight(fp, n_features=5)
        assert len(train) == 60
        assert parsed_meta.n_classes == 3
        with open(out / "test.svmlight") as fp:
            test, _ = parse_svmlight(fp, n_features=5)
        assert len(test) == 30

    def test_ranking_files_parse_back(self, tmp_path):
        out = tmp_path / "data"
        assert run_cli("make-synthetic", "--out", str(out),
                       "--task", "ranking", "--n-queries", "20",
                       "--n-test-queries", "10", "--docs-per-query", "6",
                       "--n-features", "4") == 0
        with open(out / "train.ltr") as fp:
            queries = parse_ltr_svmlight(fp)
        assert len(queries) == 20
        assert all(q.n_docs == 6 for q in queries)

    def test_file_backed_run_consumes_emitted_data(self, tmp_path):
        data = tmp_path / "data"
        run_cli("make-synthetic", "--out", str(data), "--task",
                "classification", "--n-classes", "4", "--n-features", "6",
                "--n-train", "150", "--n-test", "50")
        out = tmp_path / "exp"
        assert run_cli(
            "run", "--task", "classification", "--method", "eps-greedy",
            "--horizon", "200", "--seeds", "0", "--dataset-kind", "file",
            "--train-file", str(data / "train.svmlight"),
            "--test-file", str(data / "test.svmlight"),
            "--output-dir", str(out)) == 0
        assert (out / "trace_seed0.csv").exists()


class TestParserErrors:
    def test_bad_flag_raises_system_exit(self):
        with pytest.raises(SystemExit):
            run_cli("run", "--not-a-flag", "1")

    def test_missing_subcommand_raises_system_exit(self):
        with pytest.raises(SystemExit):
            run_cli()
