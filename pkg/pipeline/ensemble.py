"""
Ensemble voting over prediction sets.

Hard voting counts stored labels (so label-only prediction files work);
soft voting averages probability vectors. Ties in a hard vote are resolved
by the highest mean probability among the tied labels, or by canonical label
order when probabilities are absent, and every tie-resolved row is flagged.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from pipeline.corpus import TaskSpec
from pipeline.errors import EnsembleError, describe_ids
from pipeline.predictions import PredictionRow, PredictionSet

logger = logging.getLogger(__name__)

MODES = ("hard", "soft")
TIE_RULES = ("soft_fallback", "canonical_order")


def default_mode(n_members: int) -> str:
    """Two-member ensembles average probabilities; larger ones take a majority vote."""
    return "soft" if n_members == 2 else "hard"


@dataclass
class EnsembleSpec:
    members: List[PredictionSet]
    mode: str = "hard"
    tie_rule: str = "soft_fallback"
    description: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise EnsembleError(f"unknown ensemble mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.tie_rule not in TIE_RULES:
            raise EnsembleError(f"unknown tie rule {self.tie_rule!r}; expected one of {', '.join(TIE_RULES)}")
        if len(self.members) < 2:
            raise EnsembleError(f"an ensemble needs at least 2 members, got {len(self.members)}")

        first = self.members[0]
        reference = set(first.ids)
        for member in self.members[1:]:
            if member.task != first.task:
                raise EnsembleError(
                    f"{member.model_name} predicts Task {member.task.task_id}, "
                    f"{first.model_name} predicts Task {first.task.task_id}"
                )
            ids = set(member.ids)
            if ids != reference:
                raise EnsembleError(
                    f"{member.model_name} does not cover the ids of {first.model_name}: "
                    f"missing {describe_ids(reference - ids)}, unexpected {describe_ids(ids - reference)}"
                )
        if self.mode == "soft":
            lacking = [m.model_name for m in self.members if not m.has_probabilities]
            if lacking:
                raise EnsembleError(f"soft voting needs probabilities; missing for {', '.join(lacking)}")

    @property
    def task(self) -> TaskSpec:
        return self.members[0].task

    @property
    def digest(self) -> str:
        names = ", ".join(m.model_name for m in self.members)
        head = self.description or f"{self.mode} vote"
        rule = f", ties: {self.tie_rule}" if self.mode == "hard" else ""
        return f"{head} over {len(self.members)} members{rule}: {names}"


@dataclass(frozen=True)
class EnsembleRow:
    id: str
    label: str
    votes: Tuple[int, ...]
    mean_probs: Optional[Tuple[float, ...]]
    tie: bool


@dataclass
class EnsembleResult:
    task: TaskSpec
    rows: List[EnsembleRow] = field(default_factory=list)
    spec_digest: str = ""

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.rows]

    @property
    def labels(self) -> List[str]:
        return [r.label for r in self.rows]

    def to_frame(self) -> pd.DataFrame:
        data: Dict[str, list] = {
            "id": self.ids,
            "label": self.labels,
            "tie_flag": [int(r.tie) for r in self.rows],
        }
        for j, label in enumerate(self.task.labels):
            data[f"votes_{label}"] = [r.votes[j] for r in self.rows]
        if self.rows and all(r.mean_probs is not None for r in self.rows):
            for j, label in enumerate(self.task.labels):
                data[f"mean_p_{label}"] = [r.mean_probs[j] for r in self.rows]
        return pd.DataFrame(data)

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")
        return path

    def write_submission(self, path: Union[str, Path]) -> Path:
        """Headerless ``id,label`` file in the shared-task submission format."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame()[["id", "label"]].to_csv(path, index=False, header=False, lineterminator="\n")
        return path

    def to_prediction_set(self, model_name: str = "ensemble") -> PredictionSet:
        return PredictionSet(model_name, self.task, [PredictionRow(r.id, r.label) for r in self.rows])


def tie_rate(result: EnsembleResult) -> float:
    if not result.rows:
        return 0.0
    return sum(r.tie for r in result.rows) / len(result.rows)


def _mean_vector(rows: Sequence[PredictionRow]) -> Optional[Tuple[float, ...]]:
    if any(r.probs is None for r in rows):
        return None
    width = len(rows[0].probs)
    # fsum keeps the mean independent of member order
    return tuple(math.fsum(r.probs[j] for r in rows) / len(rows) for j in range(width))


def _collect(spec: EnsembleSpec):
    task = spec.task
    lookups = [{r.id: r for r in m.rows} for m in spec.members]
    for example_id in spec.members[0].ids:
        rows = [lookup[example_id] for lookup in lookups]
        votes = [0] * task.num_labels
        for row in rows:
            votes[task.index(row.label)] += 1
        yield example_id, tuple(votes), _mean_vector(rows)


def _first_max(values: Sequence[float], candidates: Sequence[int]) -> int:
    best = candidates[0]
    for j in candidates[1:]:
        if values[j] > values[best]:
            best = j
    return best


def hard_vote(spec: EnsembleSpec) -> EnsembleResult:
    """Plurality of member labels per example."""
    if spec.mode != "hard":
        raise EnsembleError(f"hard_vote called with mode {spec.mode!r}")
    task = spec.task
    rows = []
    for example_id, votes, mean in _collect(spec):
        top = max(votes)
        tied = [j for j, v in enumerate(votes) if v == top]
        if len(tied) == 1:
            winner = tied[0]
        elif spec.tie_rule == "soft_fallback" and mean is not None:
            winner = _first_max(mean, tied)
        else:
            winner = tied[0]
        rows.append(EnsembleRow(example_id, task.labels[winner], votes, mean, len(tied) > 1))
    result = EnsembleResult(task, rows, spec.digest)
    logger.info("Hard vote over %d members: %d rows, tie rate %.4f",
                len(spec.members), len(rows), tie_rate(result))
    return result


def soft_vote(spec: EnsembleSpec) -> EnsembleResult:
    """Argmax of the mean probability vector per example."""
    if spec.mode != "soft":
        raise EnsembleError(f"soft_vote called with mode {spec.mode!r}")
    task = spec.task
    everyone = list(range(task.num_labels))
    rows = []
    for example_id, votes, mean in _collect(spec):
        winner = _first_max(mean, everyone)
        tie = sum(1 for p in mean if p == mean[winner]) > 1
        rows.append(EnsembleRow(example_id, task.labels[winner], votes, mean, tie))
    result = EnsembleResult(task, rows, spec.digest)
    logger.info("Soft vote over %d members: %d rows", len(spec.members), len(rows))
    return result


def vote(spec: EnsembleSpec) -> EnsembleResult:
    return hard_vote(spec) if spec.mode == "hard" else soft_vote(spec)


def cv_ensemble(prediction_sets: Sequence[PredictionSet]) -> EnsembleResult:
    """Majority vote over the k fold models of a cross-validation run."""
    spec = EnsembleSpec(list(prediction_sets), mode="hard", tie_rule="soft_fallback",
                        description=f"cross-validation majority vote (k={len(prediction_sets)})")
    return hard_vote(spec)
