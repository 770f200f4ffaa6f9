"""
Tests for the lesiontag command-line pipeline.
"""

import json
import os

import pytest
from typer.testing import CliRunner

from src.cli.main import app
from src.cli.run_context import MANIFEST_FILE

runner = CliRunner()


def invoke(*args: str):
    return runner.invoke(app, [str(a) for a in args])


def ok(*args: str):
    result = invoke(*args)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture
def multiclass_run(tmp_path):
    ok("synth", "--num-labels", 3, "--images-per-label", 4, "--seed", 1, "--out", tmp_path / "synth")
    bundle = tmp_path / "synth" / "dataset"
    ok("train", "--bundle", bundle, "--epochs", 2, "--batch-size", 4, "--lr", 0.01,
       "--seed", 1, "--out", tmp_path / "train")
    return bundle, tmp_path / "train" / "model.ckpt"


def test_synth_train_eval_pipeline(tmp_path, multiclass_run):
    bundle, checkpoint = multiclass_run
    ok("eval", "--checkpoint", checkpoint, "--bundle", bundle, "--top-k", "1,2", "--out", tmp_path / "eval")

    metrics = json.loads((tmp_path / "eval" / "metrics.json").read_text())
    assert 0.0 <= metrics["top1_accuracy"] <= metrics["top2_accuracy"] <= 1.0
    assert (tmp_path / "eval" / "confusion.csv").exists()
    manifest = json.loads((tmp_path / "eval" / MANIFEST_FILE).read_text())
    assert manifest["subcommand"] == "eval"
    assert set(manifest["artifacts"]) == {"metrics.txt", "metrics.json", "confusion.csv"}
    trace = (tmp_path / "train" / "loss_trace.tsv").read_text().splitlines()
    assert trace[0] == "epoch\tloss"
    assert len(trace) == 3


def test_eval_rejects_k_beyond_label_count(tmp_path, multiclass_run):
    bundle, checkpoint = multiclass_run
    result = invoke("eval", "--checkpoint", checkpoint, "--bundle", bundle, "--top-k", "1,9",
                    "--out", tmp_path / "eval")
    assert result.exit_code == 2
    assert "error: bad-argument:" in result.output
    assert not (tmp_path / "eval" / "metrics.json").exists()


def test_missing_bundle_is_a_data_error(tmp_path):
    result = invoke("train", "--bundle", tmp_path / "nowhere", "--out", tmp_path / "train")
    assert result.exit_code == 3
    assert "error: data-error:" in result.output


def test_unparseable_fold_file_is_a_data_error(tmp_path, multiclass_run):
    bundle, _ = multiclass_run
    folds = tmp_path / "folds.tsv"
    folds.write_text("s00000\tx\n")
    result = invoke("train", "--bundle", bundle, "--folds", folds, "--fold", 0, "--out", tmp_path / "train0")
    assert result.exit_code == 3
    assert "error: data-error:" in result.output


def test_stray_read_failures_report_as_data_errors(tmp_path, monkeypatch):
    def unreadable(path):
        raise OSError(f"cannot read {path}")

    monkeypatch.setattr("src.cli.main.load_bundle", unreadable)
    result = invoke("train", "--bundle", tmp_path / "bundle", "--out", tmp_path / "train")
    assert result.exit_code == 3
    assert "error: data-error: cannot read" in result.output


def test_reruns_with_the_same_seed_are_byte_identical(tmp_path, multiclass_run):
    bundle, _ = multiclass_run
    ok("train", "--bundle", bundle, "--epochs", 2, "--batch-size", 4, "--lr", 0.01,
       "--seed", 1, "--out", tmp_path / "again")
    first = json.loads((tmp_path / "train" / MANIFEST_FILE).read_text())["artifacts"]
    second = json.loads((tmp_path / "again" / MANIFEST_FILE).read_text())["artifacts"]
    assert first == second
    assert (tmp_path / "train" / "model.ckpt").read_bytes() == (tmp_path / "again" / "model.ckpt").read_bytes()


def test_config_file_values_yield_to_command_line(tmp_path):
    settings = tmp_path / "synth.json"
    settings.write_text(json.dumps({"num_labels": 2, "images_per_label": 5, "seed": 3}))
    ok("synth", "--config", settings, "--images-per-label", 2, "--out", tmp_path / "synth")
    records = (tmp_path / "synth" / "dataset" / "records.tsv").read_text().splitlines()
    assert len(records) == 1 + 2 * 2
    manifest = json.loads((tmp_path / "synth" / MANIFEST_FILE).read_text())
    assert manifest["seed"] == 3

    settings.write_text(json.dumps({"num_labels": 2, "colour": "red"}))
    result = invoke("synth", "--config", settings, "--out", tmp_path / "bad")
    assert result.exit_code == 2


def test_multi_label_calibrate_eval_and_retrieve(tmp_path):
    ok("synth", "--num-labels", 4, "--images-per-label", 4, "--multi-label", "--seed", 2,
       "--out", tmp_path / "synth")
    bundle = tmp_path / "synth" / "dataset"
    ok("train", "--bundle", bundle, "--head", "multi-label", "--epochs", 1, "--batch-size", 8,
       "--lr", 0.01, "--seed", 2, "--out", tmp_path / "train")
    ok("calibrate", "--checkpoint", tmp_path / "train" / "model.ckpt", "--bundle", bundle,
       "--out", tmp_path / "calibrate")
    threshold = json.loads((tmp_path / "calibrate" / "threshold.json").read_text())
    assert len(threshold["weights"]) == 4
    assert threshold["train_label_accuracy"] >= threshold["fixed_half_label_accuracy"]

    ok("eval", "--checkpoint", tmp_path / "calibrate" / "model.ckpt", "--bundle", bundle,
       "--out", tmp_path / "eval")
    metrics = json.loads((tmp_path / "eval" / "metrics.json").read_text())
    assert 0.0 < metrics["map"] <= 1.0
    assert not (tmp_path / "eval" / "confusion.csv").exists()

    ok("retrieve", "--checkpoint", tmp_path / "train" / "model.ckpt", "--index-bundle", bundle,
       "--query-bundle", bundle, "--k", 3, "--out", tmp_path / "retrieve")
    rows = (tmp_path / "retrieve" / "retrieval.tsv").read_text().splitlines()
    assert len(rows) == 1 + 16 * 3
    first = rows[1].split("\t")
    assert first[1] == "1"
    assert float(first[3]) == 0.0
    assert (tmp_path / "retrieve" / "index.bin").exists()


def test_calibrate_rejects_multiclass_checkpoint(tmp_path, multiclass_run):
    bundle, checkpoint = multiclass_run
    result = invoke("calibrate", "--checkpoint", checkpoint, "--bundle", bundle, "--out", tmp_path / "cal")
    assert result.exit_code == 2


def test_kfold_split_and_fold_training(tmp_path, multiclass_run):
    bundle, _ = multiclass_run
    ok("split", "--bundle", bundle, "--mode", "kfold", "--k", 3, "--seed", 5, "--out", tmp_path / "split")
    folds = tmp_path / "split" / "folds.tsv"
    assert folds.exists()
    ok("train", "--bundle", bundle, "--folds", folds, "--fold", 1, "--epochs", 1, "--batch-size", 4,
       "--lr", 0.01, "--out", tmp_path / "train1")
    ok("eval", "--checkpoint", tmp_path / "train1" / "model.ckpt", "--bundle", bundle, "--folds", folds,
       "--fold", 1, "--top-k", "1", "--out", tmp_path / "eval1")
    text = (tmp_path / "eval1" / "metrics.txt").read_text()
    assert "top1_accuracy" in text


def test_merge_command(tmp_path):
    entries = tmp_path / "entries.tsv"
    entries.write_text(
        "DermQuest\tnevus\t400\n"
        "Dermnet\tnaevus\t200\n"
        "DermQuest\tpsoriasis\t350\n"
        "Dermnet\trare thing\t10\n"
    )
    tags = tmp_path / "tags.tsv"
    tags.write_text("DermQuest\terythematous\t300\nDermnet\terythematus\t240\n")
    ok("merge", "--entries", entries, "--tags", tags, "--out", tmp_path / "merge")

    classes = (tmp_path / "merge" / "classes.txt").read_text().splitlines()
    assert classes == ["nevus", "psoriasis"]
    assert (tmp_path / "merge" / "vocabulary.txt").read_text().splitlines() == ["erythematous"]
    table = (tmp_path / "merge" / "merge_table.tsv").read_text()
    assert "naevus\tnevus" in table
    assert os.path.exists(tmp_path / "merge" / "merge_report.txt")


def test_crossval_writes_fold_and_summary_metrics(tmp_path, multiclass_run):
    bundle, _ = multiclass_run
    ok("crossval", "--bundle", bundle, "--k", 3, "--epochs", 1, "--batch-size", 4, "--lr", 0.01,
       "--top-k", "1,2", "--seed", 5, "--out", tmp_path / "cv")
    out = tmp_path / "cv"
    for fold in range(3):
        metrics = json.loads((out / f"fold{fold}" / "metrics.json").read_text())
        assert metrics["top1_accuracy"] <= metrics["top2_accuracy"]
        assert (out / f"fold{fold}" / "metrics.txt").exists()
    rows = (out / "crossval.tsv").read_text().splitlines()
    assert rows[0].split("\t")[0] == "fold"
    assert [row.split("\t")[0] for row in rows[1:]] == ["0", "1", "2", "mean", "std"]
    summary = json.loads((out / "crossval.json").read_text())
    assert summary["head"] == "multi-class"
    assert 0.0 <= summary["mean"]["top1_accuracy"] <= 1.0
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    assert {"folds.tsv", "crossval.tsv", "crossval.json", "fold0/metrics.json"} <= set(manifest["artifacts"])


def test_crossval_rejects_a_single_fold(tmp_path, multiclass_run):
    bundle, _ = multiclass_run
    result = invoke("crossval", "--bundle", bundle, "--k", 1, "--out", tmp_path / "cv")
    assert result.exit_code == 2
    assert "error: bad-argument:" in result.output
