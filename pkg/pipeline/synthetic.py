"""
Synthetic OLID-style data for desk-scale runs.

The trigger-word corpus is offensive exactly when a tweet contains one of the
trigger words. Offensive tweets that also carry a target marker are targeted
(TIN) and take the marker's target type (GRP/IND/OTH); the rest are UNT, so
the OLID label hierarchy holds. Every generated word lands in its own bucket
of the hashing tokenizer, so triggers never share an id with filler words.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Union

import numpy as np
import pandas as pd

from pipeline.corpus import NULL_LABEL, OLID_COLUMNS, WEAK_COLUMNS, LabeledExample, TaskSpec, get_task
from pipeline.encoder import HashingTokenizer, TINY_REFERENCE

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

N_TRIGGERS = 20
N_FILLERS = 400
N_MARKERS = 4
TARGET_TYPES = ("GRP", "IND", "OTH")


@dataclass(frozen=True)
class Lexicon:
    triggers: List[str]
    fillers: List[str]
    markers: Dict[str, List[str]]


@dataclass(frozen=True)
class SyntheticTweet:
    id: str
    tweet: str
    subtask_a: str
    subtask_b: Optional[str] = None
    subtask_c: Optional[str] = None

    def label(self, task: TaskSpec) -> Optional[str]:
        return getattr(self, task.column)


def _claim_words(prefix: str, count: int, tokenizer: HashingTokenizer, taken: Set[int]) -> List[str]:
    words, i = [], 0
    while len(words) < count:
        word = f"{prefix}{i}"
        bucket = tokenizer.token_id(word)
        if bucket not in taken:
            taken.add(bucket)
            words.append(word)
        i += 1
    return words


def build_lexicon(vocab_size: int = TINY_REFERENCE.vocab_size, n_triggers: int = N_TRIGGERS,
                  n_fillers: int = N_FILLERS, n_markers: int = N_MARKERS) -> Lexicon:
    tokenizer = HashingTokenizer(vocab_size)
    taken: Set[int] = set()
    triggers = _claim_words("trig", n_triggers, tokenizer, taken)
    markers = {t: _claim_words(f"{t.lower()}mark", n_markers, tokenizer, taken) for t in TARGET_TYPES}
    fillers = _claim_words("word", n_fillers, tokenizer, taken)
    return Lexicon(triggers, fillers, markers)


def _filler_weights(n: int, zipf: Optional[float]) -> Optional[np.ndarray]:
    if zipf is None:
        return None
    weights = 1.0 / np.arange(1, n + 1) ** zipf
    return weights / weights.sum()


def trigger_corpus(n: int, seed: int, offensive_rate: float = 0.33, targeted_rate: float = 0.7,
                   length: tuple = (6, 14), zipf: Optional[float] = None,
                   lexicon: Optional[Lexicon] = None, id_offset: int = 0) -> List[SyntheticTweet]:
    """
    ``n`` tweets of filler words; offensive ones get one trigger word at a
    random position. ``zipf`` draws fillers from a Zipfian distribution
    instead of uniformly.
    """
    lexicon = lexicon or build_lexicon()
    rng = np.random.default_rng(seed)
    weights = _filler_weights(len(lexicon.fillers), zipf)
    rows = []
    for i in range(n):
        size = int(rng.integers(length[0], length[1] + 1))
        words = list(rng.choice(lexicon.fillers, size=size, p=weights))
        a, b, c = "NOT", None, None
        if rng.random() < offensive_rate:
            a = "OFF"
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(lexicon.triggers)))
            if rng.random() < targeted_rate:
                b = "TIN"
                c = TARGET_TYPES[int(rng.integers(0, len(TARGET_TYPES)))]
                words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(lexicon.markers[c])))
            else:
                b = "UNT"
        rows.append(SyntheticTweet(str(id_offset + i + 1), " ".join(words), a, b, c))
    return rows


def domain_corpus(n: int, seed: int, zipf: float = 1.1, length: tuple = (6, 14),
                  lexicon: Optional[Lexicon] = None) -> List[str]:
    """Unlabeled in-domain lines sharing the Zipfian filler distribution."""
    rows = trigger_corpus(n, seed, offensive_rate=0.33, zipf=zipf, length=length, lexicon=lexicon)
    return [r.tweet for r in rows]


def to_examples(rows: Sequence[SyntheticTweet], task: Union[str, TaskSpec]) -> List[LabeledExample]:
    """Examples that carry a label for ``task`` (the hierarchy drops the rest)."""
    task = get_task(task)
    return [LabeledExample(r.id, r.tweet, r.label(task)) for r in rows if r.label(task) is not None]


def imbalanced_examples(n: int, seed: int, minority_rate: float = 0.1,
                        lexicon: Optional[Lexicon] = None) -> List[LabeledExample]:
    return to_examples(trigger_corpus(n, seed, offensive_rate=minority_rate, lexicon=lexicon), "A")


# ---- Writers ---------------------------------------------------------------

def write_olid_tsv(rows: Sequence[SyntheticTweet], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [(r.id, r.tweet, r.subtask_a, r.subtask_b or NULL_LABEL, r.subtask_c or NULL_LABEL) for r in rows],
        columns=OLID_COLUMNS,
    )
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n")
    return path


def write_olid_testset(rows: Sequence[SyntheticTweet], tweets_path: PathLike, labels_path: PathLike,
                       task: Union[str, TaskSpec] = "A") -> None:
    """Official test layout: ``id<TAB>tweet`` file plus headerless ``id,label`` gold file."""
    task = get_task(task)
    labeled = [r for r in rows if r.label(task) is not None]
    tweets_path, labels_path = Path(tweets_path), Path(labels_path)
    tweets_path.parent.mkdir(parents=True, exist_ok=True)
    labels_path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([(r.id, r.tweet) for r in labeled], columns=["id", "tweet"]).to_csv(
        tweets_path, sep="\t", index=False, lineterminator="\n")
    pd.DataFrame([(r.id, r.label(task)) for r in labeled]).to_csv(
        labels_path, index=False, header=False, lineterminator="\n")


def weak_corpus(n: int, seed: int, duplicate_rate: float = 0.1,
                lexicon: Optional[Lexicon] = None) -> pd.DataFrame:
    """
    Weakly-labeled corpus frame (id, text, average, std) with URLs, mentions
    and exact duplicates mixed in so preprocessing has work to do.
    """
    rng = np.random.default_rng(seed)
    rows = trigger_corpus(n, seed, lexicon=lexicon)
    records = []
    for i, row in enumerate(rows):
        text = row.tweet
        if rng.random() < 0.3:
            text = f"@user{int(rng.integers(0, 50))} {text}"
        if rng.random() < 0.2:
            text = f"{text} https://t.co/{int(rng.integers(0, 10 ** 6)):06d}"
        if records and rng.random() < duplicate_rate:
            text = records[int(rng.integers(0, len(records)))][1]
        offensive = row.subtask_a == "OFF"
        average = float(np.clip(rng.normal(0.8 if offensive else 0.2, 0.1), 0.0, 1.0))
        spread = float(abs(rng.normal(0.1, 0.03)))
        records.append((f"w{i + 1}", text, round(average, 6), round(spread, 6)))
    return pd.DataFrame(records, columns=WEAK_COLUMNS)


def write_weak_corpus(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep="\t", index=False, lineterminator="\n")
    return path
