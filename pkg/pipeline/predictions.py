"""
Per-model prediction sets and their CSV files.

A prediction file is ``id,label,p_<label>...`` with the probability columns in
the task's canonical label order. Files with only ``id,label`` (including the
headerless submission format) load as label-only sets.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from pipeline.corpus import TaskSpec, get_task
from pipeline.errors import CorpusError, describe_ids

logger = logging.getLogger(__name__)

PROB_PREFIX = "p_"
PROB_TOLERANCE = 1e-6


@dataclass(frozen=True)
class PredictionRow:
    id: str
    label: str
    probs: Optional[Tuple[float, ...]] = None


@dataclass
class PredictionSet:
    """
    One model's predictions for a task, in input order.

    When probabilities are present each vector sums to 1 and the label is its
    argmax (earlier canonical label on ties).
    """

    model_name: str
    task: TaskSpec
    rows: List[PredictionRow] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        duplicated = set()
        for row in self.rows:
            if row.id in seen:
                duplicated.add(row.id)
            seen.add(row.id)
            self.task.index(row.label)
            if row.probs is None:
                continue
            if len(row.probs) != self.task.num_labels:
                raise CorpusError(
                    f"{self.model_name}: row {row.id} has {len(row.probs)} probabilities, "
                    f"Task {self.task.task_id} has {self.task.num_labels} labels"
                )
            if abs(sum(row.probs) - 1.0) > PROB_TOLERANCE:
                raise CorpusError(f"{self.model_name}: probabilities of row {row.id} sum to {sum(row.probs)}")
            if self.task.labels[int(np.argmax(row.probs))] != row.label:
                raise CorpusError(f"{self.model_name}: label of row {row.id} is not the argmax of its probabilities")
        if duplicated:
            raise CorpusError(f"{self.model_name}: duplicate ids {describe_ids(duplicated)}")

    @classmethod
    def from_probabilities(cls, model_name: str, task: TaskSpec, ids: Sequence[str],
                           probs: np.ndarray) -> "PredictionSet":
        probs = np.asarray(probs, dtype=np.float64)
        winners = probs.argmax(axis=1)
        rows = [PredictionRow(str(i), task.labels[int(w)], tuple(float(p) for p in vec))
                for i, w, vec in zip(ids, winners, probs)]
        return cls(model_name, task, rows)

    @classmethod
    def from_labels(cls, model_name: str, task: TaskSpec, ids: Sequence[str],
                    labels: Sequence[str]) -> "PredictionSet":
        return cls(model_name, task, [PredictionRow(str(i), lab) for i, lab in zip(ids, labels)])

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.rows]

    @property
    def labels(self) -> List[str]:
        return [r.label for r in self.rows]

    @property
    def has_probabilities(self) -> bool:
        return bool(self.rows) and all(r.probs is not None for r in self.rows)

    def probability_matrix(self) -> np.ndarray:
        if not self.has_probabilities:
            raise CorpusError(f"{self.model_name}: prediction set carries no probabilities")
        return np.array([r.probs for r in self.rows], dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"id": self.ids, "label": self.labels})
        if self.has_probabilities:
            matrix = self.probability_matrix()
            for j, label in enumerate(self.task.labels):
                df[PROB_PREFIX + label] = matrix[:, j]
        return df

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        return path

    @classmethod
    def read_csv(cls, path: Union[str, Path], task: Union[str, TaskSpec],
                 model_name: Optional[str] = None) -> "PredictionSet":
        """Load a prediction, ensemble-result or headerless submission file."""
        path = Path(path)
        task = get_task(task)
        if not path.exists():
            raise FileNotFoundError(f"prediction file not found: {path}")
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
        if "id" not in df.columns or "label" not in df.columns:
            df = pd.read_csv(path, dtype=str, keep_default_na=False, header=None)
            if df.shape[1] != 2:
                raise CorpusError(f"{path}: expected columns id,label (with or without a header)")
            df.columns = ["id", "label"]

        name = model_name or path.stem
        prob_columns = [PROB_PREFIX + label for label in task.labels]
        present = [c for c in df.columns if c.startswith(PROB_PREFIX)]
        if present and sorted(present) != sorted(prob_columns):
            raise CorpusError(f"{path}: probability columns {present} do not match Task {task.task_id} "
                              f"labels {list(task.labels)}")
        try:
            if present:
                probs = df[prob_columns].astype(float).to_numpy()
                rows = [PredictionRow(i, lab, tuple(vec))
                        for i, lab, vec in zip(df["id"], df["label"], probs.tolist())]
            else:
                rows = [PredictionRow(i, lab) for i, lab in zip(df["id"], df["label"])]
        except ValueError as exc:
            raise CorpusError(f"{path}: non-numeric probability: {exc}") from exc
        logger.debug("Loaded %d predictions from %s", len(rows), path)
        return cls(name, task, rows)
