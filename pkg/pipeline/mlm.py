"""
Masked language modeling.

Builds masked batches (80% mask token / 10% random token / 10% unchanged over
an exact 15% selection of maskable positions) and runs in-domain further
pre-training of an encoder's MLM head and backbone.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch.optim import AdamW
from tqdm.auto import tqdm

from pipeline.encoder import EncoderModel, HashingTokenizer, Tokenizer, TINY_REFERENCE, clone_model
from pipeline.errors import ConfigError, CorpusError, TrainingError
from pipeline.seeding import derive_seed, rng_for

logger = logging.getLogger(__name__)

IGNORE_INDEX = -100
# mask token / random token / keep original
REPLACEMENT_PROBS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class MlmTrainConfig:
    epochs: int = 1
    batch_size: int = 4
    learning_rate: float = 2e-5
    mask_rate: float = 0.15
    seed: int = 0
    max_len: int = 128
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"mlm.epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"mlm.batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"mlm.learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 < self.mask_rate < 1.0:
            raise ConfigError(f"mlm.mask_rate must be in (0, 1), got {self.mask_rate}")
        if self.max_len < 3:
            raise ConfigError(f"mlm.max_len must be at least 3, got {self.max_len}")


@dataclass
class MaskedRow:
    input_ids: List[int]
    target_ids: List[int]
    mask_positions: List[bool]


@dataclass
class MaskedBatch:
    input_ids: torch.Tensor
    target_ids: torch.Tensor
    mask_positions: torch.Tensor
    attention_mask: torch.Tensor

    def to(self, device: torch.device) -> "MaskedBatch":
        return MaskedBatch(self.input_ids.to(device), self.target_ids.to(device),
                           self.mask_positions.to(device), self.attention_mask.to(device))


_DEFAULT_TOKENIZER = HashingTokenizer(TINY_REFERENCE.vocab_size)


def _random_token(rng: np.random.Generator, tokenizer: Tokenizer) -> int:
    while True:
        token = int(rng.integers(0, tokenizer.vocab_size))
        if token not in tokenizer.special_ids:
            return token


def mask_tokens(sequence: Sequence[int], mask_rate: float, seed: int,
                tokenizer: Optional[Tokenizer] = None) -> MaskedRow:
    """
    Mask exactly max(1, round(mask_rate * m)) of the m maskable positions.

    Sentinel and padding positions are never selected. Each selected position
    independently becomes the mask token, a random regular token, or stays as
    is (80/10/10); its target is the original id.
    """
    tokenizer = tokenizer or _DEFAULT_TOKENIZER
    maskable = [i for i, t in enumerate(sequence) if t not in tokenizer.special_ids]
    if not maskable:
        raise CorpusError("sequence has no maskable tokens")
    count = min(len(maskable), max(1, round(mask_rate * len(maskable))))

    rng = np.random.default_rng(seed)
    selected = np.sort(rng.choice(maskable, size=count, replace=False))
    actions = rng.choice(3, size=count, p=REPLACEMENT_PROBS)

    input_ids = list(sequence)
    target_ids = [IGNORE_INDEX] * len(sequence)
    for position, action in zip(selected, actions):
        position = int(position)
        target_ids[position] = input_ids[position]
        if action == 0:
            input_ids[position] = tokenizer.mask_id
        elif action == 1:
            input_ids[position] = _random_token(rng, tokenizer)
    return MaskedRow(input_ids, target_ids, [t != IGNORE_INDEX for t in target_ids])


def collate_masked(rows: Sequence[MaskedRow], pad_id: int) -> MaskedBatch:
    """Right-pad masked rows into tensors; padding is never a target."""
    longest = max(len(r.input_ids) for r in rows)
    shape = (len(rows), longest)
    input_ids = torch.full(shape, pad_id, dtype=torch.long)
    target_ids = torch.full(shape, IGNORE_INDEX, dtype=torch.long)
    mask_positions = torch.zeros(shape, dtype=torch.bool)
    attention_mask = torch.zeros(shape, dtype=torch.long)
    for i, row in enumerate(rows):
        n = len(row.input_ids)
        input_ids[i, :n] = torch.as_tensor(row.input_ids)
        target_ids[i, :n] = torch.as_tensor(row.target_ids)
        mask_positions[i, :n] = torch.as_tensor(row.mask_positions)
        attention_mask[i, :n] = 1
    return MaskedBatch(input_ids, target_ids, mask_positions, attention_mask)


def masked_cross_entropy(logits: torch.Tensor, batch: MaskedBatch, reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy over the selected positions only."""
    return F.cross_entropy(logits[batch.mask_positions], batch.target_ids[batch.mask_positions],
                           reduction=reduction)


def _encode_corpus(model: EncoderModel, corpus: Sequence[str], max_len: int) -> Tuple[List[List[int]], List[int]]:
    if not corpus:
        raise CorpusError("MLM corpus is empty")
    max_len = min(max_len, model.config.max_positions)
    sequences = [model.tokenize(line, max_len) for line in corpus]
    special = model.tokenizer.special_ids
    usable = [i for i, s in enumerate(sequences) if any(t not in special for t in s)]
    if not usable:
        raise CorpusError("MLM corpus has no line with a maskable token")
    if len(usable) < len(sequences):
        logger.warning("Skipping %d corpus lines without maskable tokens", len(sequences) - len(usable))
    return sequences, usable


def further_pretrain(model: EncoderModel, corpus: Sequence[str], config: MlmTrainConfig,
                     progress: bool = False) -> Tuple[EncoderModel, List[float]]:
    """
    Continue MLM training of ``model`` on in-domain text lines.

    The input model is left untouched; a trained copy is returned together
    with the per-step mean masked cross-entropy.
    """
    sequences, usable = _encode_corpus(model, corpus, config.max_len)
    adapted = clone_model(model)
    device = adapted.device
    optimizer = AdamW(adapted.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay)
    pad_id = adapted.tokenizer.pad_id

    curve: List[float] = []
    steps_per_epoch = math.ceil(len(usable) / config.batch_size)
    logger.info("MLM further pre-training: %d lines, %d epoch(s), %d steps/epoch",
                len(usable), config.epochs, steps_per_epoch)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(config.seed, "dropout"))
        adapted.train()
        for epoch in range(config.epochs):
            # Fresh shuffle and fresh masks every epoch.
            order = rng_for(config.seed, "shuffle", epoch).permutation(usable)
            starts = range(0, len(order), config.batch_size)
            for start in tqdm(starts, desc=f"mlm epoch {epoch + 1}", disable=not progress, leave=False):
                idx = [int(i) for i in order[start:start + config.batch_size]]
                rows = [mask_tokens(sequences[i], config.mask_rate,
                                    derive_seed(config.seed, "mask", epoch, i), adapted.tokenizer)
                        for i in idx]
                batch = collate_masked(rows, pad_id).to(device)
                logits = adapted.mlm_logits(batch.input_ids, batch.attention_mask)
                loss = masked_cross_entropy(logits, batch)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite MLM loss at step {len(curve)} (epoch {epoch + 1}, corpus lines {idx})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                curve.append(float(loss.item()))
    adapted.eval()

    if curve:
        logger.info("MLM loss: first step %.4f, last step %.4f", curve[0], curve[-1])
    return adapted, curve


def mlm_heldout_loss(model: EncoderModel, corpus: Sequence[str], seed: int,
                     mask_rate: float = 0.15, max_len: int = 128, batch_size: int = 32) -> float:
    """Mean masked cross-entropy per masked token, with masks fixed by ``seed``."""
    sequences, usable = _encode_corpus(model, corpus, max_len)
    pad_id = model.tokenizer.pad_id
    total, count = 0.0, 0
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(usable), batch_size):
                idx = usable[start:start + batch_size]
                rows = [mask_tokens(sequences[i], mask_rate, derive_seed(seed, "heldout", i), model.tokenizer)
                        for i in idx]
                batch = collate_masked(rows, pad_id).to(model.device)
                logits = model.mlm_logits(batch.input_ids, batch.attention_mask)
                total += float(masked_cross_entropy(logits.double(), batch, reduction="sum").item())
                count += int(batch.mask_positions.sum().item())
    finally:
        model.train(was_training)
    loss = total / count
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite held-out MLM loss over {len(usable)} lines")
    return loss


def save_loss_curve(curve: Sequence[float], path: Union[str, Path]) -> Path:
    """Write the ``step,loss`` CSV (steps numbered from 1)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"step": np.arange(1, len(curve) + 1), "loss": list(curve)}).to_csv(
        path, index=False, lineterminator="\n")
    return path
