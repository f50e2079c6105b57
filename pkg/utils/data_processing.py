"""
Data Processing Utilities
Functions for loading run artifacts and shaping them into frames for the
viewer and the report command.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd
import yaml

from pipeline.config import RESOLVED_CONFIG
from pipeline.corpus import get_task
from pipeline.evaluate import EvalReport, comparison_table

PathLike = Union[str, Path]

# Files a run directory may hold, by the stage that writes them.
RUN_LOG = "run.log"
CORPUS_FILE = "corpus.txt"
PREPROCESS_STATS = "preprocess_stats.yaml"
MLM_CHECKPOINT = "mlm_model.pt"
MLM_LOSS = "mlm_loss.csv"
MODEL_CHECKPOINT = "model.pt"
EPOCH_METRICS = "epoch_metrics.csv"
PREDICTIONS = "predictions.csv"
FOLD_MANIFEST = "fold_manifest.csv"
CV_SUMMARY = "cv_summary.csv"
ENSEMBLE = "ensemble.csv"
SUBMISSION = "submission.csv"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
CONFUSION_FIGURE = "confusion.png"
COMPARISON_TEXT = "comparison.txt"
COMPARISON_CSV = "comparison.csv"
COMPARISON_HTML = "comparison.html"


def fold_predictions_name(fold: int) -> str:
    return f"predictions_fold{fold:02d}.csv"


def fold_metrics_name(fold: int) -> str:
    return f"epoch_metrics_fold{fold:02d}.csv"


def list_runs(root: PathLike) -> List[Path]:
    """
    Find run directories under ``root`` (any directory holding a resolved
    config), sorted by path.

    Args:
        root: Directory to search recursively

    Returns:
        Sorted list of run directories
    """
    root = Path(root)
    if not root.exists():
        return []
    return sorted({p.parent for p in root.rglob(RESOLVED_CONFIG)})


def load_run(run_dir: PathLike) -> Dict:
    """
    Load whatever artifacts a run directory holds.

    Missing artifacts come back as None (or an empty frame for metrics), so a
    partially finished run still renders.
    """
    run_dir = Path(run_dir)
    config_path = run_dir / RESOLVED_CONFIG
    config = yaml.safe_load(config_path.read_text(encoding="utf-8")) if config_path.exists() else {}
    stats_path = run_dir / PREPROCESS_STATS
    report_path = run_dir / REPORT_JSON

    return {
        "name": run_dir.name,
        "path": run_dir,
        "config": config or {},
        "task": (config or {}).get("task", "A"),
        "preprocess": yaml.safe_load(stats_path.read_text(encoding="utf-8")) if stats_path.exists() else None,
        "report": EvalReport.load(report_path) if report_path.exists() else None,
        "epoch_metrics": load_epoch_metrics(run_dir),
        "loss_curve": load_loss_curve(run_dir),
        "predictions": load_predictions(run_dir),
        "cv_summary": _read_optional_csv(run_dir / CV_SUMMARY),
    }


def _read_optional_csv(path: Path) -> Optional[pd.DataFrame]:
    if not path.exists():
        return None
    # Labels such as "NULL" must stay strings.
    return pd.read_csv(path, keep_default_na=False, dtype={"id": str})


def load_epoch_metrics(run_dir: PathLike) -> pd.DataFrame:
    """Epoch metrics of a single run or of every CV fold, with a ``fold`` column (-1 for single runs)."""
    run_dir = Path(run_dir)
    frames = []
    single = run_dir / EPOCH_METRICS
    if single.exists():
        frames.append(pd.read_csv(single).assign(fold=-1))
    for path in sorted(run_dir.glob("epoch_metrics_fold*.csv")):
        fold = int(path.stem.rsplit("fold", 1)[1])
        frames.append(pd.read_csv(path).assign(fold=fold))
    if not frames:
        return pd.DataFrame(columns=["epoch", "macro_f1", "accuracy", "train_loss", "fold"])
    return pd.concat(frames, ignore_index=True)


def get_epoch_trends(metrics: pd.DataFrame) -> pd.DataFrame:
    """
    Mark the selected epoch of every run or fold.

    Selection keeps the first epoch reaching the best macro F1, matching
    fine-tuning's own rule.
    """
    metrics = metrics.copy()
    metrics["is_best"] = False
    if metrics.empty:
        return metrics
    for _, group in metrics.groupby("fold"):
        best = group["macro_f1"].idxmax()
        metrics.loc[best, "is_best"] = True
    metrics["best_so_far"] = metrics.groupby("fold")["macro_f1"].cummax()
    return metrics


def load_loss_curve(run_dir: PathLike, window: int = 10) -> Optional[pd.DataFrame]:
    """MLM loss per step plus a rolling mean over ``window`` steps."""
    frame = _read_optional_csv(Path(run_dir) / MLM_LOSS)
    if frame is None:
        return None
    frame["smoothed"] = frame["loss"].rolling(window, min_periods=1).mean()
    return frame


def load_predictions(run_dir: PathLike) -> Optional[pd.DataFrame]:
    """The run's final labels: the ensemble if there is one, else the single-model predictions."""
    run_dir = Path(run_dir)
    for name in (ENSEMBLE, PREDICTIONS):
        frame = _read_optional_csv(run_dir / name)
        if frame is not None:
            return frame
    return None


def prediction_distribution(predictions: pd.DataFrame, task: str) -> pd.DataFrame:
    """Count and share of every label of ``task`` among the predictions."""
    labels = list(get_task(task).labels)
    counts = predictions["label"].value_counts().reindex(labels, fill_value=0)
    total = int(counts.sum())
    summary = pd.DataFrame({"label": labels, "count": counts.to_numpy()})
    summary["share"] = (summary["count"] / total * 100).round(1) if total else 0.0
    return summary


def calculate_kpis(report: EvalReport) -> Dict:
    """
    Headline numbers of an evaluation report.

    Args:
        report: Loaded evaluation report

    Returns:
        Dictionary of KPI values (scores in percent)
    """
    per_class = report.per_class
    weakest = min(per_class, key=lambda label: (per_class[label].f1, label))
    kpis = {
        "model": report.model_name,
        "task": report.task_id,
        "n_examples": report.n_examples,
        "macro_f1": report.macro_f1,
        "accuracy": report.accuracy,
        "weakest_class": weakest,
        "weakest_f1": per_class[weakest].f1,
        "false_positives": 0,
        "false_negatives": 0,
    }
    positive = report.task.positive
    if positive is not None and report.task.num_labels == 2:
        labels = list(report.matrix.labels)
        p = labels.index(positive)
        n = 1 - p
        kpis["false_positives"] = int(report.matrix.counts[n, p])
        kpis["false_negatives"] = int(report.matrix.counts[p, n])
    return kpis


def per_class_frame(report: EvalReport) -> pd.DataFrame:
    """Long-form per-class scores: one row per (label, metric)."""
    rows = []
    for label, scores in report.per_class.items():
        rows.append({"label": label, "metric": "precision",
                     "value": scores.precision if scores.precision_defined else None})
        rows.append({"label": label, "metric": "recall", "value": scores.recall})
        rows.append({"label": label, "metric": "f1", "value": scores.f1})
    return pd.DataFrame(rows)


def error_sample_frame(report: EvalReport) -> pd.DataFrame:
    rows = [
        {"kind": kind, "id": example_id, "text": text}
        for kind, samples in report.error_samples.items()
        for example_id, text in samples
    ]
    return pd.DataFrame(rows, columns=["kind", "id", "text"])


def flatten_comparison(table: pd.DataFrame) -> pd.DataFrame:
    """Join the (label, metric) column levels into single names such as ``OFF F1``."""
    flat = table.copy()
    flat.columns = [f"{top} {sub}".strip() for top, sub in table.columns]
    return flat


def load_comparison(report_paths: Sequence[PathLike]) -> pd.DataFrame:
    """Comparison table of several saved reports, in the given order."""
    return comparison_table([EvalReport.load(p) for p in report_paths])


def majority_baseline_f1(report: EvalReport) -> float:
    """Macro F1 (percent) a majority-class predictor would reach on the report's gold labels."""
    support = report.matrix.counts.sum(axis=1)
    total = int(support.sum())
    if total == 0:
        return 0.0
    share = support.max() / total
    return float(100.0 * (2 * share / (1 + share)) / len(support))
