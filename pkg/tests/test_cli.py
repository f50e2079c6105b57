import math

import pandas as pd
import pytest
import torch
import yaml

import cli
from pipeline.config import SEED_ENV
from pipeline.corpus import read_lines, write_lines
from pipeline.encoder import build_encoder, load_checkpoint
from pipeline.errors import TrainingError
from pipeline.evaluate import EvalReport
from pipeline.seeding import derive_seed
from pipeline.synthetic import SyntheticTweet, domain_corpus, write_olid_tsv

from conftest import TINY_FINETUNE_LR, TINY_MLM_LR


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


def run(*argv):
    return cli.main([str(a) for a in argv] + ["--no-progress"])


def resolved(out):
    return yaml.safe_load((out / "resolved_config.yaml").read_text())


# ---- preprocess ------------------------------------------------------------

def test_preprocess(tmp_path, weak_file):
    out = tmp_path / "pre"
    assert run("preprocess", "--weak-corpus", weak_file, "--output-dir", out) == 0

    lines = read_lines(out / "corpus.txt")
    stats = yaml.safe_load((out / "preprocess_stats.yaml").read_text())
    assert stats["input_count"] == 100
    assert stats["dedup_count"] == 100
    assert stats["sample_count"] == len(lines) == 5
    assert all("@" not in line and "http" not in line for line in lines)
    assert (out / "run.log").exists()
    assert resolved(out)["preprocess"]["fraction"] == 0.05


def test_rerun_is_byte_identical(tmp_path, weak_file):
    for name in ("first", "second"):
        assert run("preprocess", "--weak-corpus", weak_file, "--fraction", "0.3", "--output-dir",
                   tmp_path / name) == 0
    assert (tmp_path / "first" / "corpus.txt").read_bytes() == (tmp_path / "second" / "corpus.txt").read_bytes()
    first, second = resolved(tmp_path / "first"), resolved(tmp_path / "second")
    first.pop("output_dir"), second.pop("output_dir")
    assert first == second


def test_seed_from_environment(tmp_path, weak_file, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "7")
    out = tmp_path / "pre"
    assert run("preprocess", "--weak-corpus", weak_file, "--seed", "1", "--output-dir", out) == 0
    config = resolved(out)
    assert config["global_seed"] == 7
    assert config["seeds"]["sample"] == derive_seed(7, "sample")


# ---- exit codes ------------------------------------------------------------

@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["finetune", "--epochs", "many"],
    ["evaluate", "--baseline", "coin_flip"],
])
def test_usage_errors_exit_2(argv):
    assert cli.main(argv) == 2


def test_data_errors_exit_2(tmp_path):
    out = tmp_path / "out"
    assert run("preprocess", "--weak-corpus", tmp_path / "missing.tsv", "--output-dir", out) == 2
    assert (out / "resolved_config.yaml").exists()
    assert run("preprocess", "--output-dir", out) == 2
    assert run("preprocess", "--set", "preprocess.fractoin=0.1", "--output-dir", out) == 2
    assert run("report", "--output-dir", out) == 2


def test_internal_errors_exit_1(tmp_path, weak_file, monkeypatch):
    def boom(config, out):
        raise RuntimeError("unexpected")

    def diverge(config, out):
        raise TrainingError("loss went to nan")

    monkeypatch.setitem(cli.COMMANDS, "preprocess", boom)
    assert run("preprocess", "--weak-corpus", weak_file, "--output-dir", tmp_path / "a") == 1
    monkeypatch.setitem(cli.COMMANDS, "preprocess", diverge)
    assert run("preprocess", "--weak-corpus", weak_file, "--output-dir", tmp_path / "b") == 1


# ---- pretrain-mlm ----------------------------------------------------------

@pytest.fixture
def corpus_file(tmp_path, lexicon):
    path = tmp_path / "data" / "corpus.txt"
    write_lines(path, domain_corpus(18, seed=3, lexicon=lexicon))
    return path


def test_pretrain_mlm(tmp_path, corpus_file):
    out = tmp_path / "mlm"
    assert run("pretrain-mlm", "--corpus", corpus_file, "--epochs", 1, "--lr", TINY_MLM_LR,
               "--batch-size", 4, "--output-dir", out) == 0
    config = resolved(out)
    assert config["mlm"]["learning_rate"] == TINY_MLM_LR
    assert config["mlm"]["seed"] == config["seeds"]["mlm"]

    curve = pd.read_csv(out / "mlm_loss.csv")
    assert len(curve) == math.ceil(18 / 4)
    assert load_checkpoint(out / "mlm_model.pt").config.name == "tiny-reference"


def test_pretrain_zero_epochs_keeps_base_weights(tmp_path, corpus_file):
    out = tmp_path / "mlm"
    assert run("pretrain-mlm", "--corpus", corpus_file, "--epochs", 0, "--output-dir", out) == 0
    base = build_encoder("tiny-reference", seed=resolved(out)["seeds"]["init"])
    restored = load_checkpoint(out / "mlm_model.pt")
    for key, value in base.state_dict().items():
        assert torch.equal(restored.state_dict()[key], value)
    assert len(pd.read_csv(out / "mlm_loss.csv")) == 0


# ---- finetune / evaluate ---------------------------------------------------

def finetune_args(olid_files, out, *extra):
    return ["finetune", "--train", olid_files["train"], "--test", olid_files["test"], "--epochs", 2,
            "--lr", TINY_FINETUNE_LR, "--output-dir", out, *extra]


def test_finetune_and_evaluate(tmp_path, olid_files, test_rows, capsys):
    out = tmp_path / "ft"
    assert run(*finetune_args(olid_files, out, "--batch-size", 8)) == 0
    predictions = pd.read_csv(out / "predictions.csv", dtype={"id": str})
    assert predictions["id"].tolist() == [r.id for r in test_rows]
    assert list(predictions.columns) == ["id", "label", "p_NOT", "p_OFF"]
    assert len(pd.read_csv(out / "epoch_metrics.csv")) == 2
    assert load_checkpoint(out / "model.pt").num_labels == 2

    evaluation = tmp_path / "eval"
    assert run("evaluate", "--test", olid_files["test"], "--gold-labels", olid_files["labels"],
               "--predictions", out / "predictions.csv", "--output-dir", evaluation) == 0
    report = EvalReport.load(evaluation / "report.json")
    assert report.n_examples == len(test_rows)
    assert report.model_name == "predictions"
    assert (evaluation / "confusion.png").exists()
    assert (evaluation / "report.txt").read_text() in capsys.readouterr().out


def test_replay_from_resolved_config(tmp_path, olid_files):
    first = tmp_path / "first"
    assert run(*finetune_args(olid_files, first, "--batch-size", 8)) == 0
    second = tmp_path / "second"
    assert run("finetune", "--config", first / "resolved_config.yaml", "--output-dir", second) == 0
    assert (first / "predictions.csv").read_bytes() == (second / "predictions.csv").read_bytes()
    assert (first / "epoch_metrics.csv").read_bytes() == (second / "epoch_metrics.csv").read_bytes()


def test_finetune_from_pretrained_checkpoint(tmp_path, olid_files, corpus_file):
    mlm = tmp_path / "mlm"
    assert run("pretrain-mlm", "--corpus", corpus_file, "--epochs", 1, "--lr", TINY_MLM_LR,
               "--output-dir", mlm) == 0
    out = tmp_path / "ft"
    assert run(*finetune_args(olid_files, out, "--checkpoint", mlm / "mlm_model.pt", "--epochs", 1)) == 0
    assert (out / "predictions.csv").exists()


def test_cross_validation_ensemble_and_report(tmp_path, olid_files, train_rows, test_rows):
    cv = tmp_path / "cv"
    assert run(*finetune_args(olid_files, cv, "--cv", 3, "--epochs", 1)) == 0
    assert resolved(cv)["finetune"]["batch_size"] == 8
    fold_files = sorted(cv.glob("predictions_fold*.csv"))
    assert [p.name for p in fold_files] == ["predictions_fold00.csv", "predictions_fold01.csv",
                                            "predictions_fold02.csv"]
    manifest = pd.read_csv(cv / "fold_manifest.csv", dtype={"id": str})
    assert sorted(manifest["id"]) == sorted(r.id for r in train_rows)
    assert sorted(manifest["fold"].unique()) == [0, 1, 2]
    assert len(pd.read_csv(cv / "cv_summary.csv")) == 3

    ens = tmp_path / "ens"
    assert run("ensemble", *fold_files, "--output-dir", ens) == 0
    ensemble = pd.read_csv(ens / "ensemble.csv", dtype={"id": str})
    assert ensemble["id"].tolist() == [r.id for r in test_rows]
    assert {"tie_flag", "votes_NOT", "votes_OFF"} <= set(ensemble.columns)
    assert (ensemble[["votes_NOT", "votes_OFF"]].sum(axis=1) == 3).all()
    assert len((ens / "submission.csv").read_text().splitlines()) == len(test_rows)

    evaluations = []
    for name, extra in (("cv", ["--predictions", ens / "ensemble.csv"]), ("base", ["--baseline", "all_not"])):
        out = tmp_path / f"eval-{name}"
        assert run("evaluate", "--gold", olid_files["gold"], "--name", name, "--output-dir", out, *extra) == 0
        evaluations.append(out / "report.json")

    table = tmp_path / "table"
    assert run("report", *evaluations, "--output-dir", table) == 0
    assert 'id="comparison"' in (table / "comparison.html").read_text()
    comparison = pd.read_csv(table / "comparison.csv", index_col=0)
    assert list(comparison.index) == ["cv", "base"]
    assert "Macro F1" in (table / "comparison.txt").read_text()


def test_ensemble_rejects_mismatched_ids(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("id,label\n1,OFF\n2,NOT\n")
    b.write_text("id,label\n1,OFF\n3,NOT\n")
    assert run("ensemble", a, b, "--mode", "hard", "--output-dir", tmp_path / "ens") == 2


def test_cross_validation_needs_test_set(tmp_path, olid_files):
    assert run("finetune", "--train", olid_files["train"], "--cv", 3, "--output-dir", tmp_path / "cv") == 2


def test_evaluate_baselines_on_shared_task_balance(tmp_path):
    rows = [SyntheticTweet(str(i + 1), f"tweet {i + 1}", "NOT" if i < 7221 else "OFF", None, None)
            for i in range(10000)]
    gold = write_olid_tsv(rows, tmp_path / "gold.tsv")
    out = tmp_path / "eval"
    assert run("evaluate", "--gold", gold, "--baseline", "all_not", "--output-dir", out) == 0
    report = EvalReport.load(out / "report.json")
    assert round(report.macro_f1, 2) == 41.93
    assert round(report.accuracy, 2) == 72.21
    assert len(report.error_samples["FN"]) == 4
