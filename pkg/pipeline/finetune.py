"""
Supervised fine-tuning.

Trains an encoder's classification head and backbone on a task, validates
after every epoch, keeps the best epoch's weights, and produces
cross-validated prediction sets for ensembling.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm.auto import tqdm

from pipeline.corpus import (
    FoldAssignment,
    LabeledExample,
    TaskSpec,
    TweetRecord,
    get_task,
    kfold_split,
)
from pipeline.encoder import (
    MODEL_REGISTRY,
    EncoderConfig,
    EncoderModel,
    attach_classifier,
    build_encoder,
    check_head,
    classification_loss,
    classify,
    clone_model,
    encode_texts,
    load_checkpoint,
)
from pipeline.errors import ConfigError, CorpusError, FoldError, TrainingError, describe_ids
from pipeline.evaluate import accuracy, confusion_matrix, macro_f1
from pipeline.predictions import PredictionSet
from pipeline.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

CV_BATCH_SIZE = 8
SELECTION_METRICS = ("macro_f1",)
LR_SCHEDULES = ("constant", "linear")

PredictInput = Union[LabeledExample, TweetRecord, str]
BaseModelSource = Union[EncoderConfig, str, Path]


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 6
    learning_rate: float = 5e-6
    batch_size: int = 4
    max_len: int = 128
    seed: int = 0
    selection_metric: str = "macro_f1"
    # Extensions, all off by default.
    early_stopping_patience: Optional[int] = None
    lr_schedule: str = "constant"
    warmup_ratio: float = 0.0
    grad_clip: Optional[float] = None
    eval_batch_size: int = 32
    workers: int = 1
    stratify: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"finetune.epochs must be positive, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigError(f"finetune.learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("finetune batch sizes must be positive")
        if self.max_len < 3:
            raise ConfigError(f"finetune.max_len must be at least 3, got {self.max_len}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ConfigError(f"unknown selection metric {self.selection_metric!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}; expected one of {', '.join(LR_SCHEDULES)}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"finetune.warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.early_stopping_patience is not None and self.early_stopping_patience < 1:
            raise ConfigError("finetune.early_stopping_patience must be positive when set")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("finetune.grad_clip must be positive when set")
        if self.workers < 1:
            raise ConfigError(f"finetune.workers must be positive, got {self.workers}")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    macro_f1: float
    accuracy: float
    train_loss: float


@dataclass
class FineTuneResult:
    best_model: EncoderModel
    best_epoch: int
    epoch_metrics: List[EpochMetrics] = field(default_factory=list)

    @property
    def best_metrics(self) -> EpochMetrics:
        return self.epoch_metrics[self.best_epoch - 1]

    def to_frame(self) -> pd.DataFrame:
        return epoch_metrics_frame(self.epoch_metrics)


def epoch_metrics_frame(metrics: Sequence[EpochMetrics]) -> pd.DataFrame:
    return pd.DataFrame(
        [(m.epoch, m.macro_f1, m.accuracy, m.train_loss) for m in metrics],
        columns=["epoch", "macro_f1", "accuracy", "train_loss"],
    )


def save_epoch_metrics(metrics: Union[FineTuneResult, Sequence[EpochMetrics]], path: Union[str, Path]) -> Path:
    """Write ``epoch,macro_f1,accuracy,train_loss`` for a run or a list of epoch metrics."""
    if isinstance(metrics, FineTuneResult):
        metrics = metrics.epoch_metrics
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    epoch_metrics_frame(metrics).to_csv(path, index=False, lineterminator="\n")
    return path


# ---- Scoring ---------------------------------------------------------------

def _probabilities(model: EncoderModel, sequences: Sequence[Sequence[int]], task: TaskSpec,
                   batch_size: int) -> np.ndarray:
    chunks = [classify(model, sequences[s:s + batch_size], task)
              for s in range(0, len(sequences), batch_size)]
    return np.concatenate(chunks, axis=0)


def _score(model: EncoderModel, sequences: Sequence[Sequence[int]], gold: Sequence[str],
           task: TaskSpec, batch_size: int) -> Tuple[float, float]:
    probs = _probabilities(model, sequences, task, batch_size)
    pred = [task.labels[int(j)] for j in probs.argmax(axis=1)]
    matrix = confusion_matrix(gold, pred, task)
    return macro_f1(matrix), accuracy(matrix)


def score_examples(model: EncoderModel, examples: Sequence[LabeledExample], task: Union[str, TaskSpec],
                   max_len: int = 128, batch_size: int = 32) -> Tuple[float, float]:
    """(macro F1, accuracy) as fractions, computed the way validation is during training."""
    task = get_task(task)
    sequences = encode_texts(model, [e.text for e in examples], max_len)
    return _score(model, sequences, [e.label for e in examples], task, batch_size)


# ---- Training --------------------------------------------------------------

def _schedule(optimizer: AdamW, config: FineTuneConfig, total_steps: int) -> LambdaLR:
    if config.lr_schedule == "constant":
        return LambdaLR(optimizer, lambda step: 1.0)
    warmup = int(config.warmup_ratio * total_steps)

    def linear(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        return max(0.0, (total_steps - step) / max(1, total_steps - warmup))

    return LambdaLR(optimizer, linear)


def _check_split(train: Sequence[LabeledExample], valid: Sequence[LabeledExample], task: TaskSpec) -> None:
    if not train:
        raise CorpusError("training set is empty")
    if not valid:
        raise CorpusError("validation set is empty")
    overlap = {e.id for e in train} & {e.id for e in valid}
    if overlap:
        raise CorpusError(f"training and validation sets share ids {describe_ids(overlap)}")
    for example in list(train) + list(valid):
        task.index(example.label)


def fine_tune(model: EncoderModel, train: Sequence[LabeledExample], valid: Sequence[LabeledExample],
              task: Union[str, TaskSpec], config: FineTuneConfig, progress: bool = False) -> FineTuneResult:
    """
    Fine-tune a copy of ``model`` for ``config.epochs`` epochs.

    Each epoch reshuffles the training data under the config seed and ends
    with one validation pass. The returned ``best_model`` holds the weights of
    the epoch with the highest validation macro F1 (earlier epoch on ties).
    """
    task = get_task(task)
    check_head(model, task)
    _check_split(train, valid, task)

    working = clone_model(model)
    train_seqs = encode_texts(working, [e.text for e in train], config.max_len)
    train_targets = [task.index(e.label) for e in train]
    train_ids = [e.id for e in train]
    valid_seqs = encode_texts(working, [e.text for e in valid], config.max_len)
    valid_gold = [e.label for e in valid]

    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    optimizer = AdamW(working.parameters(), lr=config.learning_rate, weight_decay=0.0)
    scheduler = _schedule(optimizer, config, steps_per_epoch * config.epochs)

    metrics: List[EpochMetrics] = []
    best_state: Optional[Dict[str, torch.Tensor]] = None
    best_epoch, best_score, stale = 0, -math.inf, 0
    step = 0
    logger.info("Fine-tuning %s on Task %s: %d train / %d valid, %d epochs, lr %g, batch %d",
                working.config.name, task.task_id, len(train), len(valid),
                config.epochs, config.learning_rate, config.batch_size)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(config.seed, "dropout"))
        for epoch in range(1, config.epochs + 1):
            working.train()
            order = rng_for(config.seed, "shuffle", epoch).permutation(len(train))
            losses = []
            starts = range(0, len(order), config.batch_size)
            for start in tqdm(starts, desc=f"epoch {epoch}", disable=not progress, leave=False):
                idx = order[start:start + config.batch_size]
                loss = classification_loss(working, [train_seqs[i] for i in idx],
                                           [train_targets[i] for i in idx])
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite training loss at epoch {epoch}, step {step}; "
                        f"batch ids {describe_ids(train_ids[i] for i in idx)}"
                    )
                optimizer.zero_grad()
                loss.backward()
                if config.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(working.parameters(), config.grad_clip)
                optimizer.step()
                scheduler.step()
                losses.append(float(loss.item()))
                step += 1

            f1, acc = _score(working, valid_seqs, valid_gold, task, config.eval_batch_size)
            metrics.append(EpochMetrics(epoch, f1, acc, float(np.mean(losses))))
            logger.info("epoch %d: valid macro F1 %.4f, accuracy %.4f, train loss %.4f",
                        epoch, f1, acc, metrics[-1].train_loss)

            if f1 > best_score:
                best_score, best_epoch, stale = f1, epoch, 0
                best_state = {k: v.detach().clone() for k, v in working.state_dict().items()}
            else:
                stale += 1
                if config.early_stopping_patience and stale >= config.early_stopping_patience:
                    logger.info("Early stopping after epoch %d (best epoch %d)", epoch, best_epoch)
                    break

    working.load_state_dict(best_state)
    working.eval()
    logger.info("Best epoch %d with valid macro F1 %.4f", best_epoch, best_score)
    return FineTuneResult(working, best_epoch, metrics)


# ---- Prediction ------------------------------------------------------------

def _ids_and_texts(examples: Sequence[PredictInput]) -> Tuple[List[str], List[str]]:
    ids, texts = [], []
    for position, example in enumerate(examples):
        if isinstance(example, str):
            ids.append(str(position))
            texts.append(example)
        else:
            ids.append(example.id)
            texts.append(example.text)
    return ids, texts


def predict(model: EncoderModel, examples: Sequence[PredictInput], task: Union[str, TaskSpec],
            model_name: Optional[str] = None, max_len: int = 128, batch_size: int = 32) -> PredictionSet:
    """One prediction row per input, in input order. Plain strings get positional ids."""
    task = get_task(task)
    check_head(model, task)
    name = model_name or model.config.name
    if not examples:
        return PredictionSet(name, task, [])
    ids, texts = _ids_and_texts(examples)
    sequences = encode_texts(model, texts, max_len)
    probs = _probabilities(model, sequences, task, batch_size)
    return PredictionSet.from_probabilities(name, task, ids, probs)


# ---- Cross-validation ------------------------------------------------------

@dataclass
class FoldOutcome:
    fold: int
    train_size: int
    valid_size: int
    best_epoch: int
    epoch_metrics: List[EpochMetrics]
    predictions: PredictionSet


@dataclass
class CrossValidationResult:
    folds: FoldAssignment
    outcomes: List[FoldOutcome]

    @property
    def prediction_sets(self) -> List[PredictionSet]:
        return [o.predictions for o in self.outcomes]

    def summary(self) -> pd.DataFrame:
        return pd.DataFrame([
            {
                "fold": o.fold,
                "train_size": o.train_size,
                "valid_size": o.valid_size,
                "best_epoch": o.best_epoch,
                "valid_macro_f1": o.epoch_metrics[o.best_epoch - 1].macro_f1,
                "valid_accuracy": o.epoch_metrics[o.best_epoch - 1].accuracy,
            }
            for o in self.outcomes
        ])


def _is_checkpoint(source: BaseModelSource) -> bool:
    if isinstance(source, Path):
        return True
    if not isinstance(source, str) or source in MODEL_REGISTRY:
        return False
    return Path(source).exists() or Path(source).suffix == ".pt"


def base_model(source: BaseModelSource, task: TaskSpec, seed: int) -> EncoderModel:
    """
    Materialize a fresh model for ``task`` from a registry name, an encoder
    config or a checkpoint path. Checkpoints get a new head seeded by ``seed``.
    """
    if _is_checkpoint(source):
        model = load_checkpoint(source)
        return attach_classifier(model, task.num_labels, seed)
    return build_encoder(source, seed=seed, num_labels=task.num_labels)


def _run_fold(fold: int, dataset: Sequence[LabeledExample], test: Sequence[PredictInput],
              folds: FoldAssignment, task: TaskSpec, config: FineTuneConfig,
              source: BaseModelSource, model_name: str) -> FoldOutcome:
    try:
        train, valid = folds.split(dataset, fold)
        # Every fold gets its own head initialization and data order.
        model = base_model(source, task, derive_seed(config.seed, "init", fold))
        fold_config = replace(config, seed=derive_seed(config.seed, "fold", fold))
        result = fine_tune(model, train, valid, task, fold_config)
        predictions = predict(result.best_model, test, task, model_name=f"{model_name}-fold{fold}",
                              max_len=config.max_len, batch_size=config.eval_batch_size)
    except Exception as exc:
        raise FoldError(fold, exc) from exc
    return FoldOutcome(fold, len(train), len(valid), result.best_epoch, result.epoch_metrics, predictions)


def cross_validate(dataset: Sequence[LabeledExample], test: Sequence[PredictInput], task: Union[str, TaskSpec],
                   k: int, config: FineTuneConfig, base_model_source: BaseModelSource,
                   fold_seed: Optional[int] = None, progress: bool = False) -> CrossValidationResult:
    """
    Train k models, model i validating on fold i and training on the rest;
    every model predicts the full test set. Outcomes come back in fold order.
    """
    task = get_task(task)
    if k < 2:
        raise ConfigError(f"cross-validation needs k >= 2, got {k}")
    if not test:
        raise CorpusError("cross-validation test set is empty")
    folds = kfold_split(dataset, k, derive_seed(config.seed, "folds") if fold_seed is None else fold_seed,
                        stratify=config.stratify)
    name = base_model_source.name if isinstance(base_model_source, EncoderConfig) else Path(str(base_model_source)).stem
    logger.info("Cross-validation: %d folds of sizes %s, %d test examples, %d worker(s)",
                k, folds.sizes(), len(test), config.workers)

    jobs = (delayed(_run_fold)(fold, dataset, test, folds, task, config, base_model_source, name)
            for fold in tqdm(range(k), desc="folds", disable=not progress))
    outcomes = Parallel(n_jobs=config.workers)(jobs)
    outcomes = sorted(outcomes, key=lambda o: o.fold)
    for outcome in outcomes:
        logger.info("fold %d: best epoch %d, valid macro F1 %.4f", outcome.fold, outcome.best_epoch,
                    outcome.epoch_metrics[outcome.best_epoch - 1].macro_f1)
    return CrossValidationResult(folds, outcomes)


def cross_validated_predict(dataset: Sequence[LabeledExample], test: Sequence[PredictInput],
                            task: Union[str, TaskSpec], k: int, config: FineTuneConfig,
                            base_model_source: BaseModelSource) -> List[PredictionSet]:
    """The k fold models' predictions over the test set, in fold order."""
    return cross_validate(dataset, test, task, k, config, base_model_source).prediction_sets
