import csv
import os

import pytest

from failfoundry import cli, pipeline
from failfoundry.pipeline import ConfigError, ExperimentConfig, StageError

SMALL_CONFIG = """
[experiment]
seed = 11
output = {out}
stages = generate, features, split, undersample, gbt, metrics, cluster, impute, lasso, bayes, stack, reliability

[data]
n_rows = 800
n_features = 10
n_part_types = 2
n_shared = 4
positive_rate = 0.15
coefficients = 2, -1.5, 1

[undersample]
ratio = 4

[gbt]
n_trees = 15
max_depth = 4

[cluster]
k_range = 1:5
restarts = 2

[impute]
col_na_max = 0.1

[lasso]
n_lambdas = 12
folds = 3

[bayes]
chains = 2
burnin = 150
samples = 300

[stack]
n_trees = 8
folds = 3

[reliability]
n = 300
chains = 2
burnin = 200
samples = 300
"""


def _config(tmp_path, name="out", text=SMALL_CONFIG):
    path = tmp_path / f"{name}.ini"
    path.write_text(text.format(out=name))
    return path


def _csv_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for f in files:
            if f.endswith(".csv") and f != "manifest.csv":
                full = os.path.join(dirpath, f)
                with open(full, "rb") as fh:
                    out[os.path.relpath(full, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    roots = [pipeline.run(_config(tmp, name)) for name in ("a", "b")]
    return roots


def test_fnv1a64_reference_values():
    assert pipeline.fnv1a64(b"") == 0xCBF29CE484222325
    assert pipeline.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert pipeline.fnv1a64(b"foobar") == 0x85944171F73967E8


def test_empty_stage_list_writes_only_manifest(tmp_path):
    cfg = ExperimentConfig.from_string("[experiment]\nstages =\noutput = o\n", str(tmp_path))
    root = pipeline.run(cfg)
    assert os.listdir(root) == ["manifest.csv"]
    assert pipeline.read_manifest(os.path.join(root, "manifest.csv")) == []


def test_unknown_stage_rejected_before_running(tmp_path):
    with pytest.raises(ConfigError, match="unknown stage"):
        ExperimentConfig.from_string("[experiment]\nstages = generate, train\noutput = o\n",
                                     str(tmp_path))
    assert not (tmp_path / "o").exists()


def test_missing_sections_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[data]\nn_rows = 5\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_string("[experiment]\nstages = generate\n")
    cfg = ExperimentConfig.from_string(
        "[experiment]\nstages = generate\noutput = o\n[data]\nn_rows = many\n", str(tmp_path))
    with pytest.raises(StageError, match="n_rows"):
        pipeline.run(cfg)


def test_full_pipeline_all_stages_ok(two_runs):
    rows = pipeline.read_manifest(os.path.join(two_runs[0], "manifest.csv"))
    assert [r["stage"] for r in rows] == list(pipeline.STAGES)
    assert all(r["status"] == "ok" for r in rows)
    for expected in ("metrics/roc.svg", "lasso/coefficients.csv", "bayes/summary.csv",
                     "stack/auc.csv", "reliability/quantiles.csv", "cluster/elbow.csv"):
        assert os.path.exists(os.path.join(two_runs[0], expected))


def test_rerun_is_byte_identical(two_runs):
    a, b = (pipeline.read_manifest(os.path.join(r, "manifest.csv")) for r in two_runs)
    assert [r["outputs_hash"] for r in a] == [r["outputs_hash"] for r in b]
    assert [r["inputs_hash"] for r in a] == [r["inputs_hash"] for r in b]
    assert _csv_bytes(two_runs[0]) == _csv_bytes(two_runs[1])


def test_seed_changes_outputs(tmp_path, two_runs):
    root = pipeline.run(ExperimentConfig.from_string(
        "[experiment]\nseed = 12\nstages = generate\noutput = c\n", str(tmp_path)))
    first = pipeline.read_manifest(os.path.join(two_runs[0], "manifest.csv"))[0]
    other = pipeline.read_manifest(os.path.join(root, "manifest.csv"))[0]
    assert first["outputs_hash"] != other["outputs_hash"]


def test_stage_failure_recorded_in_manifest(tmp_path):
    cfg = ExperimentConfig.from_string(
        "[experiment]\nstages = generate, lasso, reliability\noutput = o\n"
        "[data]\nn_rows = 200\nn_features = 6\n", str(tmp_path))
    with pytest.raises(StageError, match="impute"):
        pipeline.run(cfg)
    rows = pipeline.read_manifest(tmp_path / "o" / "manifest.csv")
    assert [(r["stage"], r["status"]) for r in rows] == [
        ("generate", "ok"), ("lasso", "failed"), ("reliability", "skipped")]
    assert "StageError" in rows[1]["error"]


def test_context_refuses_paths_outside_output(tmp_path):
    cfg = ExperimentConfig(stages=[], output=str(tmp_path / "o"))
    ctx = pipeline._Context(cfg)
    with pytest.raises(StageError, match="outside"):
        ctx.path("../escape.csv")


# -- CLI ----------------------------------------------------------------------

def test_cli_run(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text("[experiment]\nstages = generate\noutput = o\n[data]\nn_rows = 100\n")
    assert cli.main(["run", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.csv")


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text("[experiment]\nstages = bogus\noutput = o\n")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error: ConfigError: ")


def test_cli_runtime_error_exit_code(tmp_path, capsys):
    assert cli.main(["plot", "--kind", "line", "--in", str(tmp_path / "missing.csv"),
                     "--out", str(tmp_path / "x.svg")]) == 1
    assert capsys.readouterr().err.startswith("error: FileNotFoundError: ")


def test_cli_plot(tmp_path):
    src = tmp_path / "roc.csv"
    src.write_text("fpr,tpr\n0,0\n0,1\n1,1\n")
    out = tmp_path / "roc.svg"
    assert cli.main(["plot", "--kind", "roc", "--in", str(src), "--out", str(out)]) == 0
    assert out.read_text().startswith("<svg")


def test_cli_modeling_commands(tmp_path, capsys):
    t = str(tmp_path)
    data = f"{t}/d.csv"
    run = cli.main
    assert run(["synth", "--rows", "400", "--features", "5", "--positive-rate", "0.2",
                "--coefficients", "2,-1", "--output", data, "--schema-out", f"{t}/s.csv"]) == 0
    assert run(["data", "--input", data, "--schema", f"{t}/s.csv", "--undersample-ratio", "2",
                "--output", f"{t}/u.csv"]) == 0
    assert run(["gbt", "fit", "--input", data, "--model", f"{t}/m.txt", "--n-trees", "10",
                "--max-depth", "3"]) == 0
    assert run(["gbt", "predict", "--model", f"{t}/m.txt", "--input", data,
                "--output", f"{t}/p.csv"]) == 0
    assert run(["gbt", "importance", "--model", f"{t}/m.txt", "--top-k", "2"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2
    assert run(["metrics", "--input", f"{t}/p.csv", "--out-dir", f"{t}/met", "--svg"]) == 0
    assert "auc=" in capsys.readouterr().out
    assert os.path.exists(f"{t}/met/roc.svg")
    assert run(["lasso", "fit", "--input", data, "--folds", "3", "--n-lambdas", "8",
                "--out-dir", f"{t}/lasso"]) == 0
    assert run(["bayes", "fit", "--input", data, "--chains", "2", "--burnin", "100",
                "--samples", "200", "--out-dir", f"{t}/bayes"]) == 0
    assert run(["stack", "fit", "--input", data, "--folds", "3", "--n-trees", "5",
                "--out-dir", f"{t}/stack"]) == 0
    with open(f"{t}/stack/oof_auc.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model"] for r in rows] == ["m1s0", "m2s0", "m3s0", "stack_in_sample"]


def test_cli_cluster_commands(tmp_path, capsys):
    t = str(tmp_path)
    data = f"{t}/d.csv"
    assert cli.main(["synth", "--rows", "200", "--features", "8", "--part-types", "2",
                     "--shared", "0", "--output", data]) == 0
    assert cli.main(["cluster", "kmeans", "--input", data, "--k", "2",
                     "--output", f"{t}/a.csv"]) == 0
    assert "wcss=0.0" in capsys.readouterr().out
    assert cli.main(["cluster", "elbow", "--input", data, "--k-range", "1:4",
                     "--restarts", "2", "--output", f"{t}/e.csv"]) == 0
    with open(f"{t}/e.csv") as fh:
        assert len(fh.read().splitlines()) == 5


def test_cli_reliability_commands(tmp_path, capsys):
    t = str(tmp_path)
    assert cli.main(["reliability", "simulate", "--n", "200", "--output", f"{t}/l.csv"]) == 0
    assert cli.main(["reliability", "fit", "--input", f"{t}/l.csv", "--chains", "2",
                     "--burnin", "200", "--samples", "300", "--out-dir", f"{t}/rel"]) == 0
    capsys.readouterr()
    assert cli.main(["reliability", "quantile", "--draws", f"{t}/rel/draws.csv",
                     "--x", "0.5,0.5,0.5", "--q", "0.5"]) == 0
    value = float(capsys.readouterr().out.split()[0])
    assert 2.0 < value < 10.0


def test_cli_bad_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,Response\n1,2,0\n1\n")
    assert cli.main(["gbt", "fit", "--input", str(bad), "--model", str(tmp_path / "m")]) == 1
    assert ":3:" in capsys.readouterr().err
