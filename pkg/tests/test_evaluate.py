import numpy as np
import pandas as pd
import pytest
from sklearn.metrics import precision_recall_fscore_support

from pipeline.corpus import TASK_A, TASK_C
from pipeline.ensemble import EnsembleSpec, vote
from pipeline.errors import EvaluationError
from pipeline.evaluate import (
    ConfusionMatrix,
    EvalReport,
    accuracy,
    baseline_predict,
    build_report,
    comparison_table,
    confusion_matrix,
    format_table,
    macro_f1,
    per_class_prf,
    read_confusion_csv,
    render_confusion_figure,
)
from pipeline.predictions import PredictionSet

from conftest import make_examples

# Test-set label balance of the shared task: 7221 NOT / 2779 OFF.
N_NOT, N_OFF = 7221, 2779


@pytest.fixture(scope="module")
def olid_like_gold():
    return make_examples(["NOT"] * N_NOT + ["OFF"] * N_OFF)


def brute_force(gold, pred, labels):
    scores = {}
    for label in labels:
        tp = sum(1 for g, p in zip(gold, pred) if g == label and p == label)
        fp = sum(1 for g, p in zip(gold, pred) if g != label and p == label)
        fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores[label] = (precision, recall, f1)
    return scores


@pytest.mark.parametrize("task", [TASK_A, TASK_C], ids=["binary", "three-way"])
def test_metrics_match_brute_force_and_sklearn(task):
    rng = np.random.default_rng(0)
    labels = list(task.labels)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        gold = list(rng.choice(labels, size=n))
        pred = list(rng.choice(labels, size=n))
        matrix = confusion_matrix(gold, pred, task)
        scores = per_class_prf(matrix)
        expected = brute_force(gold, pred, labels)
        for label in labels:
            s = scores[label]
            assert (s.precision, s.recall, s.f1) == pytest.approx(expected[label], abs=1e-12)

        p, r, f, support = precision_recall_fscore_support(gold, pred, labels=labels, zero_division=0)
        np.testing.assert_allclose([scores[lab].f1 for lab in labels], f, atol=1e-12)
        np.testing.assert_allclose([scores[lab].precision for lab in labels], p, atol=1e-12)
        assert [scores[lab].support for lab in labels] == list(support)
        assert macro_f1(matrix) == pytest.approx(float(np.mean(f)), abs=1e-12)
        assert accuracy(matrix) == pytest.approx(sum(g == q for g, q in zip(gold, pred)) / n)


@pytest.mark.parametrize("task", [TASK_A, TASK_C], ids=["binary", "three-way"])
def test_metrics_ignore_example_order(task):
    rng = np.random.default_rng(1)
    gold = list(rng.choice(task.labels, size=200))
    pred = list(rng.choice(task.labels, size=200))
    order = rng.permutation(200)
    matrix = confusion_matrix(gold, pred, task)
    shuffled = confusion_matrix([gold[i] for i in order], [pred[i] for i in order], task)
    np.testing.assert_array_equal(matrix.counts, shuffled.counts)
    assert macro_f1(shuffled) == macro_f1(matrix)
    assert accuracy(shuffled) == accuracy(matrix)


@pytest.mark.parametrize("q", [0.1, 0.2778, 0.5])
def test_all_positive_predictor_identity(q):
    n_off = round(q * 10000)
    gold = ["NOT"] * (10000 - n_off) + ["OFF"] * n_off
    off = per_class_prf(confusion_matrix(gold, ["OFF"] * len(gold), TASK_A))["OFF"]
    q = n_off / 10000
    assert off.precision == pytest.approx(q, abs=1e-12)
    assert off.recall == 1.0
    assert off.f1 == pytest.approx(2 * q / (1 + q), abs=1e-12)


@pytest.mark.parametrize("task", [TASK_A, TASK_C], ids=["binary", "three-way"])
def test_constant_predictor_macro_f1(task):
    rng = np.random.default_rng(2)
    gold = list(rng.choice(task.labels, size=300))
    for label in task.labels:
        matrix = confusion_matrix(gold, [label] * len(gold), task)
        scores = per_class_prf(matrix)
        assert all(scores[other].f1 == 0.0 for other in task.labels if other != label)
        assert macro_f1(matrix) == pytest.approx(scores[label].f1 / task.num_labels, abs=1e-12)


def test_hand_computed_fixture():
    matrix = confusion_matrix(["NOT", "NOT", "NOT", "OFF"], ["NOT", "NOT", "OFF", "OFF"], TASK_A)
    assert matrix.counts.tolist() == [[2, 1], [0, 1]]
    scores = per_class_prf(matrix)
    assert scores["NOT"].f1 == pytest.approx(0.8)
    assert scores["OFF"].f1 == pytest.approx(2 / 3)
    assert round(100 * macro_f1(matrix), 2) == 73.33
    assert accuracy(matrix) == 0.75


def test_never_predicted_class_counts_as_zero():
    matrix = confusion_matrix(["NOT", "OFF"], ["NOT", "NOT"], TASK_A)
    scores = per_class_prf(matrix)
    assert scores["OFF"].precision == 0.0
    assert not scores["OFF"].precision_defined
    assert macro_f1(matrix) == pytest.approx((2 / 3 + 0.0) / 2)


def test_confusion_matrix_errors():
    with pytest.raises(EvaluationError):
        confusion_matrix(["NOT"], ["NOT", "OFF"], TASK_A)
    with pytest.raises(EvaluationError):
        confusion_matrix([], [], TASK_A)
    with pytest.raises(EvaluationError, match="TIN"):
        confusion_matrix(["NOT"], ["TIN"], TASK_A)
    with pytest.raises(EvaluationError):
        ConfusionMatrix(("NOT", "OFF"), np.zeros((3, 3), dtype=np.int64))


def test_all_not_baseline(olid_like_gold):
    report = build_report(olid_like_gold, baseline_predict("all_not", olid_like_gold, TASK_A), TASK_A)
    assert round(report.accuracy, 2) == 72.21
    assert round(report.macro_f1, 2) == 41.93
    assert round(report.per_class["NOT"].precision, 2) == 72.21
    assert report.per_class["NOT"].recall == 100.0
    assert report.per_class["OFF"].f1 == 0.0
    assert report.model_name == "all_not"


def test_all_off_baseline(olid_like_gold):
    report = build_report(olid_like_gold, baseline_predict("all_off", olid_like_gold, TASK_A), TASK_A)
    assert round(report.per_class["OFF"].precision, 2) == 27.79
    assert report.per_class["OFF"].recall == 100.0
    assert round(report.per_class["OFF"].f1, 2) == 43.49
    assert report.macro_f1 == pytest.approx(21.74, abs=0.02)
    assert round(report.accuracy, 2) == 27.79


def test_baseline_strategies():
    gold = make_examples(["IND", "GRP", "IND"])
    majority = baseline_predict("majority_class", gold, TASK_C)
    assert set(majority.labels) == {"IND"}
    tied = baseline_predict("majority_class", make_examples(["GRP", "OTH"]), TASK_C)
    assert set(tied.labels) == {"GRP"}
    with pytest.raises(EvaluationError, match="Task A"):
        baseline_predict("all_not", gold, TASK_C)
    with pytest.raises(EvaluationError):
        baseline_predict("coin_flip", gold, TASK_C)
    with pytest.raises(EvaluationError):
        baseline_predict("all_not", [], TASK_A)


def test_report_rejects_id_mismatch():
    gold = make_examples(["NOT", "OFF"])
    predictions = PredictionSet.from_labels("m", TASK_A, ["1", "3"], ["NOT", "OFF"])
    with pytest.raises(EvaluationError, match=r"missing predictions \[2\]"):
        build_report(gold, predictions, TASK_A)


def test_error_samples_are_ordered_by_id():
    labels = ["NOT", "OFF"] * 10
    gold = make_examples(labels)
    flipped = ["OFF" if lab == "NOT" else "NOT" for lab in labels]
    # Reverse file order: samples must still come out by numeric id.
    predictions = PredictionSet.from_labels("m", TASK_A, [e.id for e in gold][::-1], flipped[::-1])
    report = build_report(gold, predictions, TASK_A, n_samples=3)
    assert [i for i, _ in report.error_samples["FP"]] == ["1", "3", "5"]
    assert [i for i, _ in report.error_samples["FN"]] == ["2", "4", "6"]
    assert report.error_samples["FP"][0] == ("1", "text 1")


def test_three_way_report_has_no_error_samples():
    gold = make_examples(["GRP", "IND", "OTH"])
    report = build_report(gold, PredictionSet.from_labels("m", TASK_C, ["1", "2", "3"], ["IND", "IND", "IND"]),
                          TASK_C)
    assert report.error_samples == {"FP": [], "FN": []}


def test_report_from_ensemble_result():
    gold = make_examples(["NOT", "OFF"])
    members = [PredictionSet.from_labels(n, TASK_A, ["1", "2"], ["NOT", "OFF"]) for n in "abc"]
    report = build_report(gold, vote(EnsembleSpec(members)), TASK_A)
    assert report.model_name == "ensemble"
    assert report.macro_f1 == 100.0


def test_report_json_round_trip(tmp_path):
    gold = make_examples(["NOT", "NOT", "NOT", "OFF"])
    predictions = PredictionSet.from_labels("model-x", TASK_A, ["1", "2", "3", "4"], ["NOT", "NOT", "OFF", "OFF"])
    report = build_report(gold, predictions, TASK_A)
    loaded = EvalReport.load(report.save(tmp_path / "report.json"))
    assert loaded.to_dict() == report.to_dict()
    assert loaded.task is TASK_A
    assert round(loaded.macro_f1, 2) == 73.33


def test_malformed_report(tmp_path):
    path = tmp_path / "report.json"
    path.write_text('{"task": "A"}')
    with pytest.raises(EvaluationError):
        EvalReport.load(path)
    path.write_text("not json")
    with pytest.raises(EvaluationError):
        EvalReport.load(path)


def test_comparison_table(olid_like_gold):
    reports = [
        build_report(olid_like_gold, baseline_predict(b, olid_like_gold, TASK_A), TASK_A)
        for b in ("all_not", "all_off")
    ]
    table = comparison_table(reports)
    assert list(table.index) == ["all_not", "all_off"]
    assert table.index.name == "Model"
    assert list(table.columns)[-2:] == [("Macro F1", ""), ("Acc.", "")]
    assert np.isnan(table.loc["all_not", ("OFF", "P")])
    assert table.loc["all_off", ("OFF", "F1")] == pytest.approx(43.49, abs=0.005)

    text = format_table(table)
    assert all(f"{r.macro_f1:.2f}" in text for r in reports)
    assert "-" in text.splitlines()[-2]


def test_comparison_table_rejects_mixed_tasks():
    a = build_report(make_examples(["NOT"]), PredictionSet.from_labels("a", TASK_A, ["1"], ["NOT"]), TASK_A)
    c = build_report(make_examples(["GRP"]), PredictionSet.from_labels("c", TASK_C, ["1"], ["GRP"]), TASK_C)
    with pytest.raises(EvaluationError):
        comparison_table([a, c])
    with pytest.raises(EvaluationError):
        comparison_table([])


def test_confusion_figure(tmp_path):
    matrix = ConfusionMatrix(("NOT", "OFF"), np.array([[620, 0], [0, 240]], dtype=np.int64))
    path = render_confusion_figure(matrix, tmp_path / "confusion.png", title="Task A")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    restored = read_confusion_csv(tmp_path / "confusion.csv")
    assert restored.labels == ("NOT", "OFF")
    assert restored.counts.tolist() == [[620, 0], [0, 240]]
    assert isinstance(matrix.to_frame(), pd.DataFrame)
