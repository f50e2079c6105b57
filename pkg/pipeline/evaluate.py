"""
Evaluation Metrics and Reports
Confusion matrices, per-class precision/recall/F1, macro F1, accuracy,
constant-predictor baselines, error samples and Table-style reports.

Metric functions return fractions; reports hold percentages and round to two
decimals only when rendered.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from pipeline.corpus import LabeledExample, TaskSpec, get_task, id_sort_key
from pipeline.ensemble import EnsembleResult
from pipeline.errors import EvaluationError, describe_ids
from pipeline.predictions import PredictionSet

logger = logging.getLogger(__name__)

BASELINES = ("all_not", "all_off", "majority_class")
DEFAULT_ERROR_SAMPLES = 4

PathLike = Union[str, Path]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are gold labels, columns predicted labels, both in canonical order."""

    labels: Tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise EvaluationError(f"confusion counts of shape {self.counts.shape} for {n} labels")
        if (self.counts < 0).any():
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.counts, index=list(self.labels), columns=list(self.labels))
        frame.index.name = "gold"
        return frame


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int
    # False when the class was never predicted; precision is then reported as 0 / "-".
    precision_defined: bool = True

    def scaled(self, factor: float) -> "ClassScores":
        return ClassScores(self.precision * factor, self.recall * factor, self.f1 * factor,
                           self.support, self.precision_defined)


def confusion_matrix(gold: Sequence[str], pred: Sequence[str], task: Union[str, TaskSpec]) -> ConfusionMatrix:
    task = get_task(task)
    gold, pred = list(gold), list(pred)
    if len(gold) != len(pred):
        raise EvaluationError(f"{len(gold)} gold labels but {len(pred)} predictions")
    if not gold:
        raise EvaluationError("nothing to evaluate: no examples")
    foreign = (set(gold) | set(pred)) - set(task.labels)
    if foreign:
        raise EvaluationError(
            f"labels {sorted(foreign)} are not Task-{task.task_id} labels {list(task.labels)}"
        )
    counts = sk_confusion_matrix(gold, pred, labels=list(task.labels))
    return ConfusionMatrix(task.labels, counts.astype(np.int64))


def per_class_prf(matrix: ConfusionMatrix) -> Dict[str, ClassScores]:
    """Per-class scores as fractions. Undefined quotients count as 0."""
    counts = matrix.counts.astype(np.float64)
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {
        label: ClassScores(float(precision[j]), float(recall[j]), float(f1[j]),
                           int(actual[j]), bool(predicted[j] > 0))
        for j, label in enumerate(matrix.labels)
    }


def macro_f1(matrix: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1 over all labels, never-predicted ones included."""
    scores = per_class_prf(matrix)
    return float(np.mean([s.f1 for s in scores.values()]))


def accuracy(matrix: ConfusionMatrix) -> float:
    return float(np.trace(matrix.counts) / matrix.total)


# ---- Baselines -------------------------------------------------------------

def baseline_predict(strategy: str, gold: Sequence[Union[LabeledExample, str]],
                     task: Union[str, TaskSpec]) -> PredictionSet:
    """
    Constant predictor with one-hot probabilities.

    ``all_not`` and ``all_off`` are Task-A strategies; ``majority_class``
    works for every task (ties go to the earlier canonical label).
    """
    task = get_task(task)
    if not gold:
        raise EvaluationError("baseline needs a non-empty gold set")
    if strategy not in BASELINES:
        raise EvaluationError(f"unknown baseline {strategy!r}; expected one of {', '.join(BASELINES)}")

    if isinstance(gold[0], LabeledExample):
        ids = [g.id for g in gold]
        labels = [g.label for g in gold]
    else:
        ids = [str(i) for i in range(len(gold))]
        labels = list(gold)

    if strategy == "majority_class":
        counts = Counter(labels)
        constant = max(task.labels, key=lambda lab: (counts.get(lab, 0), -task.index(lab)))
    else:
        constant = "NOT" if strategy == "all_not" else "OFF"
        if constant not in task.labels:
            raise EvaluationError(
                f"baseline {strategy} is only defined for Task A; use majority_class for Task {task.task_id}"
            )
    one_hot = np.zeros((len(ids), task.num_labels))
    one_hot[:, task.index(constant)] = 1.0
    return PredictionSet.from_probabilities(strategy, task, ids, one_hot)


# ---- Reports ---------------------------------------------------------------

@dataclass
class EvalReport:
    """All scores in percent, full precision."""

    task_id: str
    model_name: str
    n_examples: int
    per_class: Dict[str, ClassScores]
    macro_f1: float
    accuracy: float
    matrix: ConfusionMatrix
    error_samples: Dict[str, List[Tuple[str, str]]] = field(default_factory=lambda: {"FP": [], "FN": []})

    @property
    def task(self) -> TaskSpec:
        return get_task(self.task_id)

    def to_dict(self) -> Dict:
        return {
            "task": self.task_id,
            "model": self.model_name,
            "n_examples": self.n_examples,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "per_class": {
                label: {
                    "precision": s.precision,
                    "recall": s.recall,
                    "f1": s.f1,
                    "support": s.support,
                    "precision_defined": s.precision_defined,
                }
                for label, s in self.per_class.items()
            },
            "confusion": {
                "labels": list(self.matrix.labels),
                "counts": self.matrix.counts.tolist(),
            },
            "error_samples": {
                kind: [{"id": i, "text": t} for i, t in samples]
                for kind, samples in self.error_samples.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "EvalReport":
        try:
            matrix = ConfusionMatrix(tuple(data["confusion"]["labels"]),
                                     np.array(data["confusion"]["counts"], dtype=np.int64))
            per_class = {
                label: ClassScores(v["precision"], v["recall"], v["f1"], v["support"], v["precision_defined"])
                for label, v in data["per_class"].items()
            }
            samples = {kind: [(s["id"], s["text"]) for s in rows]
                       for kind, rows in data.get("error_samples", {}).items()}
            return cls(data["task"], data["model"], data["n_examples"], per_class,
                       data["macro_f1"], data["accuracy"], matrix, samples)
        except (KeyError, TypeError) as exc:
            raise EvaluationError(f"malformed report: missing or invalid field {exc}") from exc

    def save(self, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: PathLike) -> "EvalReport":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"report not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise EvaluationError(f"{path}: not a JSON report: {exc}") from exc
        return cls.from_dict(data)

    def to_table(self) -> str:
        return format_table(comparison_table([self]))


def _error_samples(gold: Sequence[LabeledExample], predicted: Dict[str, str], task: TaskSpec,
                   n: int) -> Dict[str, List[Tuple[str, str]]]:
    samples: Dict[str, List[Tuple[str, str]]] = {"FP": [], "FN": []}
    positive = task.positive
    if positive is None or task.num_labels != 2:
        return samples
    ordered = sorted(gold, key=lambda e: id_sort_key(e.id))
    for example in ordered:
        pred = predicted[example.id]
        if pred == positive and example.label != positive and len(samples["FP"]) < n:
            samples["FP"].append((example.id, example.text))
        elif pred != positive and example.label == positive and len(samples["FN"]) < n:
            samples["FN"].append((example.id, example.text))
    return samples


def build_report(gold: Sequence[LabeledExample], result: Union[PredictionSet, EnsembleResult],
                 task: Union[str, TaskSpec], model_name: Optional[str] = None,
                 n_samples: int = DEFAULT_ERROR_SAMPLES) -> EvalReport:
    """Score ``result`` against ``gold``; both must cover exactly the same ids."""
    task = get_task(task)
    predicted = dict(zip(result.ids, result.labels))
    gold_ids = {e.id for e in gold}
    if gold_ids != set(predicted):
        raise EvaluationError(
            "gold and predictions cover different ids: "
            f"missing predictions {describe_ids(gold_ids - set(predicted))}, "
            f"not in gold {describe_ids(set(predicted) - gold_ids)}"
        )
    matrix = confusion_matrix([e.label for e in gold], [predicted[e.id] for e in gold], task)
    per_class = {label: s.scaled(100.0) for label, s in per_class_prf(matrix).items()}

    if model_name is None:
        model_name = getattr(result, "model_name", None) or "ensemble"
    report = EvalReport(
        task_id=task.task_id,
        model_name=model_name,
        n_examples=matrix.total,
        per_class=per_class,
        macro_f1=100.0 * macro_f1(matrix),
        accuracy=100.0 * accuracy(matrix),
        matrix=matrix,
        error_samples=_error_samples(gold, predicted, task, n_samples),
    )
    logger.info("%s on Task %s: macro F1 %.2f, accuracy %.2f (%d examples)",
                model_name, task.task_id, report.macro_f1, report.accuracy, report.n_examples)
    return report


def comparison_table(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """
    One row per report: per-class P/R/F1, Macro F1 and Acc. (percent).

    Undefined precision is NaN so it renders as "-".
    """
    if not reports:
        raise EvaluationError("no reports to compare")
    task_ids = {r.task_id for r in reports}
    if len(task_ids) > 1:
        raise EvaluationError(f"cannot compare reports of different tasks: {sorted(task_ids)}")
    labels = reports[0].task.labels

    columns = [(label, metric) for label in labels for metric in ("P", "R", "F1")]
    columns += [("Macro F1", ""), ("Acc.", "")]
    rows = []
    for report in reports:
        values = []
        for label in labels:
            s = report.per_class[label]
            values += [s.precision if s.precision_defined else np.nan, s.recall, s.f1]
        values += [report.macro_f1, report.accuracy]
        rows.append(values)
    frame = pd.DataFrame(rows, columns=pd.MultiIndex.from_tuples(columns),
                         index=pd.Index([r.model_name for r in reports], name="Model"))
    return frame


def format_table(frame: pd.DataFrame) -> str:
    return frame.to_string(float_format=lambda v: f"{v:.2f}", na_rep="-") + "\n"


# ---- Figures ---------------------------------------------------------------

def render_confusion_figure(matrix: ConfusionMatrix, path: PathLike, title: Optional[str] = None) -> Path:
    """Annotated heatmap (format from the file suffix) plus ``<stem>.csv`` with the counts."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        n = len(matrix.labels)
        fig = Figure(figsize=(1.6 * n + 2.0, 1.4 * n + 1.6))
        ax = fig.subplots()
        ax.imshow(matrix.counts, cmap="Blues", vmin=0, vmax=max(1, int(matrix.counts.max())))
        ax.set_xticks(range(n), labels=list(matrix.labels))
        ax.set_yticks(range(n), labels=list(matrix.labels))
        ax.set_xlabel("Predicted")
        ax.set_ylabel("Gold")
        if title:
            ax.set_title(title)
        threshold = matrix.counts.max() / 2.0
        for g in range(n):
            for p in range(n):
                value = int(matrix.counts[g, p])
                ax.text(p, g, str(value), ha="center", va="center",
                        color="white" if value > threshold else "black")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        matrix.to_frame().to_csv(path.with_suffix(".csv"), lineterminator="\n")
    except OSError as exc:
        raise EvaluationError(f"cannot write confusion figure to {path}: {exc}") from exc
    return path


def read_confusion_csv(path: PathLike) -> ConfusionMatrix:
    frame = pd.read_csv(path, index_col=0, keep_default_na=False)
    labels = tuple(str(c) for c in frame.columns)
    if tuple(str(i) for i in frame.index) != labels:
        raise EvaluationError(f"{path}: row and column labels differ")
    return ConfusionMatrix(labels, frame.to_numpy(dtype=np.int64))
