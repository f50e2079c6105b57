"""
Corpus Loading and Preparation
Functions for reading the OLID dataset and the weakly-labeled tweet corpus,
normalizing tweets, deduplicating, sampling and splitting into folds.
"""

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import KFold, StratifiedKFold

from pipeline.errors import CorpusError, describe_ids

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

OLID_COLUMNS = ["id", "tweet", "subtask_a", "subtask_b", "subtask_c"]
OLID_TEST_COLUMNS = ["id", "tweet"]
WEAK_COLUMNS = ["id", "text", "average", "std"]
NULL_LABEL = "NULL"


# ---- Tasks -----------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    """One OLID sub-task. ``labels`` is the canonical axis order everywhere."""

    task_id: str
    labels: Tuple[str, ...]
    column: str
    positive: Optional[str] = None

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise CorpusError(
                f"label {label!r} is not a Task-{self.task_id} label "
                f"(expected one of {', '.join(self.labels)})"
            ) from None

    @property
    def num_labels(self) -> int:
        return len(self.labels)


TASK_A = TaskSpec("A", ("NOT", "OFF"), "subtask_a", positive="OFF")
TASK_B = TaskSpec("B", ("TIN", "UNT"), "subtask_b", positive="UNT")
TASK_C = TaskSpec("C", ("GRP", "IND", "OTH"), "subtask_c")
TASKS: Dict[str, TaskSpec] = {t.task_id: t for t in (TASK_A, TASK_B, TASK_C)}


def get_task(task_id: Union[str, TaskSpec]) -> TaskSpec:
    if isinstance(task_id, TaskSpec):
        return task_id
    key = str(task_id).strip().upper()
    if key not in TASKS:
        raise CorpusError(f"unknown task {task_id!r}; expected one of A, B, C")
    return TASKS[key]


# ---- Records ---------------------------------------------------------------

@dataclass(frozen=True)
class TweetRecord:
    id: str
    text: str
    weak_mean: Optional[float] = None
    weak_spread: Optional[float] = None

    def __post_init__(self):
        if (self.weak_mean is None) != (self.weak_spread is None):
            raise CorpusError(f"record {self.id}: weak_mean and weak_spread must be given together")
        if self.weak_mean is not None and not 0.0 <= self.weak_mean <= 1.0:
            raise CorpusError(f"record {self.id}: weak_mean out of range [0, 1]: {self.weak_mean}")
        if self.weak_spread is not None and self.weak_spread < 0.0:
            raise CorpusError(f"record {self.id}: negative weak_spread: {self.weak_spread}")


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    label: str


@dataclass(frozen=True)
class FoldAssignment:
    """Maps every example id to exactly one of ``k`` folds (input order kept)."""

    k: int
    fold_of: Mapping[str, int] = field(default_factory=dict)

    def members(self, fold: int) -> List[str]:
        return [i for i, f in self.fold_of.items() if f == fold]

    def sizes(self) -> List[int]:
        counts = Counter(self.fold_of.values())
        return [counts.get(f, 0) for f in range(self.k)]

    def split(self, examples: Sequence[LabeledExample], fold: int
              ) -> Tuple[List[LabeledExample], List[LabeledExample]]:
        """(train, valid) for ``fold``: valid is the fold, train everything else."""
        train = [e for e in examples if self.fold_of[e.id] != fold]
        valid = [e for e in examples if self.fold_of[e.id] == fold]
        return train, valid

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"id": list(self.fold_of.keys()),
                             "fold": list(self.fold_of.values())})


# ---- Readers ---------------------------------------------------------------

def _read_tsv(path: PathLike, expected: List[str]) -> pd.DataFrame:
    """Read a headered TSV as strings, rejecting rows with the wrong column count."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    try:
        # keep_default_na=False keeps literal tokens such as "NULL" or "NA" as text.
        frame = pd.read_csv(
            path, sep="\t", dtype=str, keep_default_na=False, na_values=[],
            quoting=csv.QUOTE_NONE, engine="python", on_bad_lines="error",
            skip_blank_lines=False, encoding="utf-8-sig",
        )
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        where = f"line {match.group(1)}" if match else "unknown line"
        raise CorpusError(f"{path}: malformed row at {where}: wrong column count") from exc
    except pd.errors.EmptyDataError:
        raise CorpusError(f"{path}: empty file (header expected)") from None

    columns = [c.strip() for c in frame.columns]
    if columns != expected:
        raise CorpusError(
            f"{path}: unexpected header {columns}; expected {expected}"
        )
    frame.columns = columns

    short = frame.isna().any(axis=1)
    if short.any():
        line = int(np.flatnonzero(short.to_numpy())[0]) + 2
        raise CorpusError(f"{path}: malformed row at line {line}: wrong column count")
    return frame


def _check_label(token: str, allowed: Iterable[str], column: str, line: int, path: Path) -> Optional[str]:
    token = token.strip()
    if token == NULL_LABEL or token == "":
        return None
    if token not in allowed:
        raise CorpusError(f"{path}: unknown label token {token!r} in column {column} at line {line}")
    return token


def load_olid(path: PathLike, task: Union[str, TaskSpec]) -> List[LabeledExample]:
    """
    Load the labeled OLID TSV for one sub-task.

    Args:
        path: TSV with header ``id tweet subtask_a subtask_b subtask_c``
        task: Task id or TaskSpec

    Returns:
        Examples carrying a label for ``task``, in file order. Task-B examples
        come only from OFF rows, Task-C examples only from OFF/TIN rows.
    """
    task = get_task(task)
    path = Path(path)
    frame = _read_tsv(path, OLID_COLUMNS)

    examples = []
    inconsistent = 0
    for offset, row in enumerate(frame.itertuples(index=False)):
        line = offset + 2
        a = _check_label(row.subtask_a, TASK_A.labels, "subtask_a", line, path)
        b = _check_label(row.subtask_b, TASK_B.labels, "subtask_b", line, path)
        c = _check_label(row.subtask_c, TASK_C.labels, "subtask_c", line, path)

        if (b is not None and a != "OFF") or (c is not None and b != "TIN"):
            inconsistent += 1

        if task is TASK_A:
            label = a
        elif task is TASK_B:
            label = b if a == "OFF" else None
        else:
            label = c if a == "OFF" and b == "TIN" else None

        if label is not None:
            examples.append(LabeledExample(id=str(row.id), text=row.tweet, label=label))

    if inconsistent:
        logger.warning("%s: %d rows violate the A/B/C label hierarchy and were not used for lower tasks",
                       path, inconsistent)
    logger.info("Loaded %d Task-%s examples from %s", len(examples), task.task_id, path)
    return examples


def load_olid_testset(path: PathLike) -> List[TweetRecord]:
    """Official OLID test tweets (``id tweet`` with header)."""
    frame = _read_tsv(path, OLID_TEST_COLUMNS)
    return [TweetRecord(id=str(r.id), text=r.tweet) for r in frame.itertuples(index=False)]


def load_gold_labels(path: PathLike, task: Union[str, TaskSpec]) -> Dict[str, str]:
    """Official headerless ``id,label`` gold file."""
    task = get_task(task)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    frame = pd.read_csv(path, header=None, dtype=str, keep_default_na=False)
    if frame.shape[1] != 2:
        raise CorpusError(f"{path}: expected 2 columns (id,label), found {frame.shape[1]}")
    labels = {}
    for line, (ident, label) in enumerate(frame.itertuples(index=False), start=1):
        label = label.strip()
        if label not in task.labels:
            raise CorpusError(f"{path}: unknown label token {label!r} at line {line}")
        labels[str(ident).strip()] = label
    return labels


def attach_gold(records: Sequence[TweetRecord], labels: Mapping[str, str],
                task: Union[str, TaskSpec]) -> List[LabeledExample]:
    """Join test tweets with gold labels, keeping tweet order."""
    task = get_task(task)
    known = {r.id for r in records}
    missing = set(labels) - known
    if missing:
        raise CorpusError(f"gold labels for ids absent from the tweet file: {describe_ids(missing)}")
    return [LabeledExample(r.id, r.text, labels[r.id]) for r in records if r.id in labels]


def load_weak_corpus(path: PathLike) -> List[TweetRecord]:
    """
    Load the weakly-labeled tweet corpus.

    The weak statistics are kept for provenance only; nothing trains on them.
    """
    path = Path(path)
    frame = _read_tsv(path, WEAK_COLUMNS)

    means = pd.to_numeric(frame["average"], errors="coerce")
    spreads = pd.to_numeric(frame["std"], errors="coerce")
    records = []
    for offset, (ident, text, mean, spread) in enumerate(
            zip(frame["id"], frame["text"], means, spreads)):
        line = offset + 2
        if math.isnan(mean) or math.isnan(spread):
            raise CorpusError(f"{path}: non-numeric weak label at line {line}")
        if not 0.0 <= mean <= 1.0:
            raise CorpusError(f"{path}: weak_mean out of range [0, 1] at line {line}: {mean}")
        if spread < 0.0:
            raise CorpusError(f"{path}: negative weak_spread at line {line}: {spread}")
        records.append(TweetRecord(str(ident), text, float(mean), float(spread)))

    logger.info("Loaded %d weak-corpus records from %s", len(records), path)
    return records


# ---- Normalization ---------------------------------------------------------

_URL_RE = re.compile(r"https?://\S+", re.IGNORECASE)
_URL_TOKEN_RE = re.compile(r"(?<!\S)URL(?!\S)")
# A mention takes its possessive and a trailing colon with it: "@USER's", "@USER:".
_MENTION_RE = re.compile(r"(?<!\S)(?:@\w+)+(?:['’]s\b)?:?")


def _strip_once(text: str) -> str:
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    text = _URL_TOKEN_RE.sub(" ", text)
    return " ".join(text.split())


def normalize_tweet(text: str) -> str:
    """Remove URLs and user mentions, collapse whitespace; everything else untouched."""
    # Repeat until nothing changes so the result is a fixed point.
    current = _strip_once(text)
    while True:
        stripped = _strip_once(current)
        if stripped == current:
            return current
        current = stripped


def normalize_records(records: Sequence[TweetRecord]) -> List[TweetRecord]:
    """Normalize every record's text, dropping records that end up empty."""
    out = []
    for r in records:
        text = normalize_tweet(r.text)
        if text:
            out.append(TweetRecord(r.id, text, r.weak_mean, r.weak_spread))
    dropped = len(records) - len(out)
    if dropped:
        logger.info("Dropped %d records that were empty after normalization", dropped)
    return out


def deduplicate(records: Sequence[TweetRecord]) -> List[TweetRecord]:
    """Drop exact text duplicates, keeping the first occurrence."""
    seen = set()
    out = []
    for r in records:
        if r.text not in seen:
            seen.add(r.text)
            out.append(r)
    return out


def sample_corpus(records: Sequence[TweetRecord], fraction: float, seed: int) -> List[TweetRecord]:
    """Uniform sample without replacement of max(1, round(fraction*n)) records, order kept."""
    if not 0.0 < fraction <= 1.0:
        raise CorpusError(f"sample fraction must be in (0, 1], got {fraction}")
    n = len(records)
    if n == 0:
        return []
    count = min(n, max(1, round(fraction * n)))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=count, replace=False))
    return [records[i] for i in chosen]


@dataclass(frozen=True)
class PreprocessStats:
    input_count: int
    nonempty_count: int
    dedup_count: int
    sample_count: int
    fraction: float
    seed: int


def preprocess_corpus(records: Sequence[TweetRecord], fraction: float, seed: int
                      ) -> Tuple[List[TweetRecord], PreprocessStats]:
    """normalize -> dedup -> sample."""
    normalized = normalize_records(records)
    unique = deduplicate(normalized)
    sample = sample_corpus(unique, fraction, seed)
    stats = PreprocessStats(len(records), len(normalized), len(unique), len(sample), fraction, seed)
    logger.info("Preprocessed corpus: %d input, %d non-empty, %d unique, %d sampled",
                stats.input_count, stats.nonempty_count, stats.dedup_count, stats.sample_count)
    return sample, stats


def write_lines(path: PathLike, texts: Iterable[str]) -> None:
    """One text per line, UTF-8, LF endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for text in texts:
            f.write(text + "\n")


def read_lines(path: PathLike) -> List[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


# ---- Splits ----------------------------------------------------------------

def kfold_split(examples: Sequence[LabeledExample], k: int, seed: int,
                stratify: bool = False) -> FoldAssignment:
    """
    Assign examples to ``k`` disjoint folds, deterministically under ``seed``.

    Unstratified folds differ in size by at most one. With ``stratify`` the
    label proportions are balanced per fold instead.
    """
    n = len(examples)
    if k < 1:
        raise CorpusError(f"k must be a positive integer, got {k}")
    if k > n:
        raise CorpusError(f"cannot split {n} examples into {k} folds")
    ids = [e.id for e in examples]
    duplicated = [i for i, c in Counter(ids).items() if c > 1]
    if duplicated:
        raise CorpusError(f"duplicate example ids: {describe_ids(duplicated)}")

    fold = np.zeros(n, dtype=int)
    if k > 1:
        random_state = int(seed) % (2 ** 32)
        if stratify:
            counts = Counter(e.label for e in examples)
            rare = sorted(label for label, c in counts.items() if c < k)
            if rare:
                raise CorpusError(
                    f"cannot stratify into {k} folds: "
                    + ", ".join(f"{label} has {counts[label]} example(s)" for label in rare)
                )
            splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=random_state)
            splits = splitter.split(np.zeros(n), [e.label for e in examples])
        else:
            splitter = KFold(n_splits=k, shuffle=True, random_state=random_state)
            splits = splitter.split(np.zeros(n))
        for f, (_, valid_idx) in enumerate(splits):
            fold[valid_idx] = f
    return FoldAssignment(k=k, fold_of={i: int(f) for i, f in zip(ids, fold)})


def label_distribution(examples: Sequence[LabeledExample], task: Union[str, TaskSpec]) -> Dict[str, int]:
    """Per-label counts in canonical order."""
    task = get_task(task)
    counts = Counter(e.label for e in examples)
    return {label: counts.get(label, 0) for label in task.labels}


def id_sort_key(example_id: str) -> Tuple[int, int, str]:
    """Numeric ids in numeric order, then the rest lexicographically."""
    if example_id.isascii() and example_id.isdigit():
        return 0, int(example_id), ""
    return 1, 0, example_id
