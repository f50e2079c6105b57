import pandas as pd
import pytest

from pipeline.config import dump_resolved, load_run_config
from pipeline.corpus import TASK_A
from pipeline.evaluate import baseline_predict, build_report, comparison_table
from pipeline.finetune import EpochMetrics, save_epoch_metrics
from pipeline.mlm import save_loss_curve
from pipeline.predictions import PredictionSet
from utils.data_processing import (
    calculate_kpis,
    error_sample_frame,
    flatten_comparison,
    fold_metrics_name,
    fold_predictions_name,
    get_epoch_trends,
    list_runs,
    load_comparison,
    load_epoch_metrics,
    load_run,
    majority_baseline_f1,
    per_class_frame,
    prediction_distribution,
)

from conftest import make_examples

GOLD = make_examples(["NOT", "NOT", "NOT", "OFF"])


@pytest.fixture
def report():
    predictions = PredictionSet.from_labels("model-x", TASK_A, ["1", "2", "3", "4"], ["NOT", "NOT", "OFF", "OFF"])
    return build_report(GOLD, predictions, TASK_A)


@pytest.fixture
def run_dir(tmp_path, report):
    out = tmp_path / "runs" / "ft"
    dump_resolved(load_run_config(overrides=["task=A"], env={}), out)
    report.save(out / "report.json")
    save_epoch_metrics([EpochMetrics(1, 0.5, 0.6, 0.7), EpochMetrics(2, 0.8, 0.8, 0.4),
                        EpochMetrics(3, 0.8, 0.9, 0.3)], out / "epoch_metrics.csv")
    save_loss_curve([3.0, 2.0, 1.0], out / "mlm_loss.csv")
    PredictionSet.from_labels("m", TASK_A, ["1", "2"], ["NOT", "OFF"]).to_csv(out / "predictions.csv")
    return out


def test_fold_file_names():
    assert fold_predictions_name(3) == "predictions_fold03.csv"
    assert fold_metrics_name(10) == "epoch_metrics_fold10.csv"


def test_list_and_load_runs(tmp_path, run_dir):
    dump_resolved(load_run_config(env={}), tmp_path / "runs" / "other")
    assert list_runs(tmp_path / "runs") == [run_dir, tmp_path / "runs" / "other"]
    assert list_runs(tmp_path / "missing") == []

    run = load_run(run_dir)
    assert run["name"] == "ft"
    assert run["task"] == "A"
    assert run["report"].model_name == "model-x"
    assert run["preprocess"] is None
    assert run["cv_summary"] is None
    assert run["predictions"]["id"].tolist() == ["1", "2"]
    assert run["loss_curve"]["smoothed"].tolist() == [3.0, 2.5, 2.0]
    assert run["epoch_metrics"]["fold"].unique().tolist() == [-1]


def test_ensemble_preferred_over_predictions(run_dir):
    pd.DataFrame({"id": ["1"], "label": ["OFF"], "tie_flag": [0]}).to_csv(run_dir / "ensemble.csv", index=False)
    assert "tie_flag" in load_run(run_dir)["predictions"]


def test_fold_metrics_and_trends(tmp_path):
    for fold in range(2):
        save_epoch_metrics([EpochMetrics(1, 0.4 + fold, 0.5, 1.0), EpochMetrics(2, 0.3 + fold, 0.5, 0.9)],
                           tmp_path / fold_metrics_name(fold))
    metrics = load_epoch_metrics(tmp_path)
    assert sorted(metrics["fold"].unique()) == [0, 1]
    trends = get_epoch_trends(metrics)
    assert trends[trends["is_best"]]["epoch"].tolist() == [1, 1]
    assert trends["best_so_far"].tolist() == pytest.approx([0.4, 0.4, 1.4, 1.4])
    assert load_epoch_metrics(tmp_path / "empty").empty


def test_best_epoch_mark_takes_first_of_ties(run_dir):
    trends = get_epoch_trends(load_epoch_metrics(run_dir))
    assert trends[trends["is_best"]]["epoch"].tolist() == [2]


def test_kpis(report):
    kpis = calculate_kpis(report)
    assert kpis["model"] == "model-x"
    assert kpis["n_examples"] == 4
    assert round(kpis["macro_f1"], 2) == 73.33
    assert kpis["weakest_class"] == "OFF"
    assert kpis["false_positives"] == 1
    assert kpis["false_negatives"] == 0


def test_per_class_and_error_frames(report):
    frame = per_class_frame(report)
    assert len(frame) == 6
    assert set(frame["metric"]) == {"precision", "recall", "f1"}
    samples = error_sample_frame(report)
    assert samples.to_dict("records") == [{"kind": "FP", "id": "3", "text": "text 3"}]


def test_prediction_distribution():
    predictions = pd.DataFrame({"id": ["1", "2", "3", "4"], "label": ["OFF", "NOT", "NOT", "NOT"]})
    summary = prediction_distribution(predictions, "A")
    assert summary["label"].tolist() == ["NOT", "OFF"]
    assert summary["count"].tolist() == [3, 1]
    assert summary["share"].tolist() == [75.0, 25.0]


def test_majority_baseline():
    gold = make_examples(["NOT"] * 7221 + ["OFF"] * 2779)
    report = build_report(gold, baseline_predict("all_off", gold, TASK_A), TASK_A)
    assert round(majority_baseline_f1(report), 2) == 41.93


def test_comparison_helpers(tmp_path, report):
    path = report.save(tmp_path / "report.json")
    table = load_comparison([path, path])
    assert table.equals(comparison_table([report, report]))
    flat = flatten_comparison(table)
    assert "OFF F1" in flat.columns
    assert "Macro F1" in flat.columns
    assert flat.index.name == "Model"
