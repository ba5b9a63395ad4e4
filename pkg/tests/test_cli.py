import json

import pytest

from graphcf.cli import main
from graphcf.report import TABLE_COLUMNS, read_table

TINY = {
    "version": 1,
    "synth": {"num_users": 400, "num_listings": 400},
    "sample": {"k": 12, "n_pos": 20, "n_neg": 20, "splits": [6, 10]},
    "classifier": {"model": {"d_emb": 4, "d": 6, "readout_hidden": 4}, "train": {"epochs": 2, "batch_size": 8}},
    "generator": {"config": {"d_z": 4, "edge_dim": 3, "hidden": 4, "epochs": 1, "batch_size": 8}},
    "generate": {"tau_add": 0.6, "tau_rem": 0.05},
}


def run_pipeline(root, config_path, generate_extra=()):
    d = {k: root / k for k in ("src", "data", "clf", "gen", "res", "rep")}
    steps = [
        ["synth", "--out", d["src"]],
        ["sample", "--source", d["src"] / "source.jsonl", "--out", d["data"]],
        ["train-clf", "--data", d["data"], "--out", d["clf"]],
        ["train-gen", "--data", d["data"], "--classifier", d["clf"] / "classifier.ckpt", "--mode", "views-only",
         "--out", d["gen"]],
        ["generate", "--data", d["data"], "--classifier", d["clf"] / "classifier.ckpt",
         "--generator", d["gen"] / "generator.ckpt", "--mode", "views-only", "--out", d["res"], *generate_extra],
        ["report", "--data", d["data"], "--results", d["res"], "--name", "views", "--out", d["rep"]],
    ]
    for step in steps:
        code = main([str(x) for x in step] + ["--config", str(config_path), "--seed", "3"])
        assert code == 0, step[0]
    return d


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


@pytest.fixture(scope="module")
def runs(tmp_path_factory, config_path):
    a = run_pipeline(tmp_path_factory.mktemp("a"), config_path)
    b = run_pipeline(tmp_path_factory.mktemp("b"), config_path)
    return a, b


ARTIFACTS = [
    ("src", "source.jsonl"), ("src", "transactions.csv"),
    ("data", "dataset.jsonl"), ("data", "splits.json"),
    ("clf", "classifier.ckpt"), ("clf", "train_log.csv"), ("clf", "metrics.json"),
    ("gen", "generator.ckpt"), ("gen", "train_log.csv"),
    ("res", "counterfactuals.jsonl"), ("res", "baseline.jsonl"),
    ("rep", "table.csv"), ("rep", "table_lift_vs_original.csv"), ("rep", "table_lift_vs_random.csv"),
]


@pytest.mark.parametrize("where,name", ARTIFACTS)
def test_rerun_is_byte_identical(runs, where, name):
    a, b = runs
    assert (a[where] / name).read_bytes() == (b[where] / name).read_bytes()


def test_pipeline_outputs(runs):
    a, _ = runs
    splits = json.loads((a["data"] / "splits.json").read_text())
    assert len(splits["validation"]) == 6 and len(splits["test"]) == 10
    metrics = json.loads((a["clf"] / "metrics.json").read_text())
    assert set(metrics) >= {"train_auc", "validation_auc", "test_auc"}
    rows = read_table(a["rep"] / "table.csv")
    assert len(rows) == 1 and list(rows[0])[1:] == list(TABLE_COLUMNS)
    row = rows[0]
    for col in ("Saves Added (%)", "Submits Added (%)", "Saves Removed (%)", "Submits Removed (%)"):
        assert row[col] == 0.0
    assert row["User Preferences Similarity (%)"] == 100.0
    assert row["Listing Price Similarity (%)"] == 100.0
    manifest = json.loads((a["res"] / "manifest_generate.json").read_text())
    assert manifest["seed"] == 3 and manifest["config"]["mode"] == "views_only"
    assert set(manifest["inputs"]) == {"dataset", "splits", "classifier", "generator"}
    assert all(len(v["sha256"]) == 64 for v in manifest["inputs"].values())


def test_no_perturbation_thresholds_give_zero_changes(runs, config_path, tmp_path):
    a, _ = runs
    res, rep = tmp_path / "res", tmp_path / "rep"
    base = ["--config", str(config_path), "--seed", "3"]
    assert main(["generate", "--data", str(a["data"]), "--classifier", str(a["clf"] / "classifier.ckpt"),
                 "--generator", str(a["gen"] / "generator.ckpt"), "--mode", "unconstrained",
                 "--tau-add", "1", "--tau-rem", "0", "--out", str(res)] + base) == 0
    assert main(["report", "--data", str(a["data"]), "--results", str(res), "--out", str(rep)] + base) == 0
    row = read_table(rep / "table.csv")[0]
    for col in TABLE_COLUMNS[:6]:
        assert row[col] == 0.0


def test_usage_errors(runs, tmp_path, capsys):
    a, _ = runs
    assert main([]) == 1
    assert main(["synth"]) == 1  # --out missing
    assert main(["sample", "--source", "x", "--splits", "oops", "--out", str(tmp_path)]) == 1
    gen = ["generate", "--data", str(a["data"]), "--classifier", str(a["clf"] / "classifier.ckpt"),
           "--generator", str(a["gen"] / "generator.ckpt"), "--out", str(tmp_path / "g")]
    assert main(gen + ["--tau-add", "0.1", "--tau-rem", "0.5"]) == 1
    assert main(gen + ["--best-of", "0"]) == 1
    assert "error" in capsys.readouterr().err


def test_data_errors(runs, tmp_path):
    a, _ = runs
    assert main(["sample", "--source", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 2}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"version": 1, "synth": {"num_userz": 3}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text(json.dumps({"version": 1, "extras": {}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("{not json")
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    broken = tmp_path / "broken"
    broken.mkdir()
    (broken / "dataset.jsonl").write_text((a["data"] / "dataset.jsonl").read_text().replace('"label"', '"lbl"', 1))
    (broken / "splits.json").write_text((a["data"] / "splits.json").read_text())
    assert main(["train-clf", "--data", str(broken), "--out", str(tmp_path / "c")]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_code(runs, tmp_path):
    a, _ = runs
    assert main(["train-clf", "--data", str(a["data"]), "--lr", "1e300", "--epochs", "3",
                 "--out", str(tmp_path / "c")]) == 3
