"""
Sequence encoders.

A uniform encoder abstraction with a classification head and an MLM head,
a registry of named pretrained variants, and a small randomly-initialized
reference encoder that runs every pipeline stage on a CPU.

Registry entries with a ``pretrained_source`` are realized through the
``transformers`` Auto classes; the tiny reference encoder is plain PyTorch.
"""

import copy
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.utils import murmurhash3_32
from torch import nn

from pipeline.corpus import TaskSpec, normalize_tweet
from pipeline.errors import CheckpointError, EncoderError

logger = logging.getLogger(__name__)

PAD_ID, BEGIN_ID, END_ID, MASK_ID, UNK_ID = 0, 1, 2, 3, 4
FIRST_REGULAR_ID = 5
CHECKPOINT_FORMAT_VERSION = 1
INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    name: str
    num_layers: int
    hidden_dim: int
    num_heads: int
    vocab_size: int
    max_positions: int = 128
    pretrained_source: Optional[str] = None
    ffn_dim: Optional[int] = None
    dropout: float = 0.1
    lowercase: bool = True

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "vocab_size", "max_positions"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise EncoderError(f"{self.name}: {name} must be a positive integer, got {value!r}")
        if self.hidden_dim % self.num_heads:
            raise EncoderError(
                f"{self.name}: hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.pretrained_source is None and self.vocab_size <= FIRST_REGULAR_ID:
            raise EncoderError(f"{self.name}: vocab_size must exceed the {FIRST_REGULAR_ID} reserved ids")
        if not 0.0 <= self.dropout < 1.0:
            raise EncoderError(f"{self.name}: dropout must be in [0, 1), got {self.dropout}")

    @property
    def feed_forward_dim(self) -> int:
        return self.ffn_dim or 4 * self.hidden_dim


TINY_REFERENCE = EncoderConfig(
    name="tiny-reference", num_layers=2, hidden_dim=32, num_heads=4, vocab_size=2048,
)

# Architecture sizes of the published checkpoints; the adapters read the real
# values from the checkpoint, these document what each name stands for.
MODEL_REGISTRY: Dict[str, EncoderConfig] = {
    c.name: c for c in (
        EncoderConfig("bert-base", 12, 768, 12, 30522, pretrained_source="bert-base-uncased"),
        EncoderConfig("bert-large", 24, 1024, 16, 30522, pretrained_source="bert-large-uncased"),
        EncoderConfig("roberta-base", 12, 768, 12, 50265, pretrained_source="roberta-base", lowercase=False),
        EncoderConfig("roberta-large", 24, 1024, 16, 50265, pretrained_source="roberta-large", lowercase=False),
        EncoderConfig("xlm-roberta", 24, 1024, 16, 250002, pretrained_source="xlm-roberta-large",
                      lowercase=False),
        EncoderConfig("albert-large-v1", 24, 1024, 16, 30000, pretrained_source="albert-large-v1"),
        EncoderConfig("albert-large-v2", 24, 1024, 16, 30000, pretrained_source="albert-large-v2"),
        EncoderConfig("albert-xxlarge-v1", 12, 4096, 64, 30000, pretrained_source="albert-xxlarge-v1"),
        EncoderConfig("albert-xxlarge-v2", 12, 4096, 64, 30000, pretrained_source="albert-xxlarge-v2"),
        TINY_REFERENCE,
    )
}


def get_config(name: str) -> EncoderConfig:
    if name not in MODEL_REGISTRY and Path(name).is_file():
        raise EncoderError(f"{name!r} is a file, not a registry model; load it with load_checkpoint")
    if name not in MODEL_REGISTRY:
        raise EncoderError(
            f"unknown model {name!r}; valid names: {', '.join(MODEL_REGISTRY)}"
        )
    return MODEL_REGISTRY[name]


# ---- Tokenizers ------------------------------------------------------------

class Tokenizer(Protocol):
    pad_id: int
    mask_id: int
    vocab_size: int
    special_ids: FrozenSet[int]

    def tokenize(self, text: str, max_len: int) -> List[int]:
        ...


def _check_max_len(max_len: int) -> None:
    if max_len < 3:
        raise EncoderError(f"max_len must be at least 3 to fit the sentinels, got {max_len}")


class HashingTokenizer:
    """Lowercased whitespace tokens hashed into ``vocab_size`` buckets."""

    pad_id = PAD_ID
    mask_id = MASK_ID
    special_ids = frozenset({PAD_ID, BEGIN_ID, END_ID, MASK_ID, UNK_ID})

    def __init__(self, vocab_size: int, lowercase: bool = True):
        self.vocab_size = vocab_size
        self.lowercase = lowercase

    def token_id(self, word: str) -> int:
        buckets = self.vocab_size - FIRST_REGULAR_ID
        return FIRST_REGULAR_ID + murmurhash3_32(word, seed=0, positive=True) % buckets

    def tokenize(self, text: str, max_len: int) -> List[int]:
        _check_max_len(max_len)
        if self.lowercase:
            text = text.lower()
        words = text.split()[: max_len - 2]
        return [BEGIN_ID] + [self.token_id(w) for w in words] + [END_ID]


class PretrainedTokenizer:
    """Adapter over a ``transformers`` tokenizer."""

    def __init__(self, hf_tokenizer):
        self._tokenizer = hf_tokenizer
        self.pad_id = hf_tokenizer.pad_token_id
        self.mask_id = hf_tokenizer.mask_token_id
        self.vocab_size = len(hf_tokenizer)
        self.special_ids = frozenset(hf_tokenizer.all_special_ids)

    def tokenize(self, text: str, max_len: int) -> List[int]:
        _check_max_len(max_len)
        return list(self._tokenizer(text, truncation=True, max_length=max_len)["input_ids"])


def tokenize(text: str, max_len: int, vocab_size: int = TINY_REFERENCE.vocab_size) -> List[int]:
    """Tiny-reference tokenization of one text."""
    return HashingTokenizer(vocab_size).tokenize(text, max_len)


# ---- Backbones -------------------------------------------------------------

class EncoderBlock(nn.Module):
    """Post-norm transformer encoder layer."""

    def __init__(self, hidden_dim: int, num_heads: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.attention = nn.MultiheadAttention(hidden_dim, num_heads, dropout=dropout, batch_first=True)
        self.attention_norm = nn.LayerNorm(hidden_dim)
        self.feed_forward = nn.Sequential(
            nn.Linear(hidden_dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, hidden_dim),
        )
        self.output_norm = nn.LayerNorm(hidden_dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, padding_mask: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(x, x, x, key_padding_mask=padding_mask, need_weights=False)
        x = self.attention_norm(x + self.dropout(attended))
        return self.output_norm(x + self.dropout(self.feed_forward(x)))


class TinyBackbone(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        h = config.hidden_dim
        self.token_embedding = nn.Embedding(config.vocab_size, h)
        self.position_embedding = nn.Embedding(config.max_positions, h)
        self.embedding_norm = nn.LayerNorm(h)
        self.dropout = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList([
            EncoderBlock(h, config.num_heads, config.feed_forward_dim, config.dropout)
            for _ in range(config.num_layers)
        ])
        self.mlm_head = nn.Linear(h, config.vocab_size)

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor,
                with_mlm: bool = False) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        positions = torch.arange(input_ids.size(1), device=input_ids.device).unsqueeze(0)
        x = self.token_embedding(input_ids) + self.position_embedding(positions)
        x = self.dropout(self.embedding_norm(x))
        padding_mask = ~attention_mask.bool()
        for block in self.blocks:
            x = block(x, padding_mask)
        return x, (self.mlm_head(x) if with_mlm else None)


class PretrainedBackbone(nn.Module):
    """Wraps a ``transformers`` masked-LM model."""

    def __init__(self, hf_model):
        super().__init__()
        self.model = hf_model

    def forward(self, input_ids, attention_mask, with_mlm: bool = False):
        out = self.model(input_ids=input_ids, attention_mask=attention_mask, output_hidden_states=True)
        return out.hidden_states[-1], (out.logits if with_mlm else None)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, mean=0.0, std=INIT_STD)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


# ---- Model -----------------------------------------------------------------

class EncoderModel(nn.Module):
    """Backbone + mean-pooled classification head; the backbone owns the MLM head."""

    def __init__(self, config: EncoderConfig, tokenizer: Tokenizer, backbone: nn.Module,
                 num_labels: int, hidden_dim: Optional[int] = None):
        super().__init__()
        self.config = config
        self.tokenizer = tokenizer
        self.backbone = backbone
        self.classifier = nn.Linear(hidden_dim or config.hidden_dim, num_labels)

    @property
    def num_labels(self) -> int:
        return self.classifier.out_features

    @property
    def device(self) -> torch.device:
        return next(self.parameters()).device

    def tokenize(self, text: str, max_len: Optional[int] = None) -> List[int]:
        return self.tokenizer.tokenize(text, max_len or self.config.max_positions)

    def class_logits(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        hidden, _ = self.backbone(input_ids, attention_mask)
        mask = attention_mask.unsqueeze(-1).to(hidden.dtype)
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return self.classifier(pooled)

    def mlm_logits(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        _, logits = self.backbone(input_ids, attention_mask, with_mlm=True)
        return logits


def _new_classifier(in_features: int, num_labels: int) -> nn.Linear:
    head = nn.Linear(in_features, num_labels)
    _init_weights(head)
    return head


def _build_pretrained(config: EncoderConfig, seed: int, num_labels: int) -> EncoderModel:
    try:
        from transformers import AutoModelForMaskedLM, AutoTokenizer
    except ImportError as exc:
        raise EncoderError(
            f"{config.name} needs the 'transformers' package to load {config.pretrained_source}"
        ) from exc
    try:
        hf_tokenizer = AutoTokenizer.from_pretrained(config.pretrained_source)
        hf_model = AutoModelForMaskedLM.from_pretrained(config.pretrained_source)
    except Exception as exc:
        raise CheckpointError(
            f"could not load pretrained checkpoint {config.pretrained_source!r} for {config.name}: {exc}. "
            "Download the weights or point pretrained_source at a local checkpoint directory; "
            "registry models are never randomly initialized."
        ) from exc
    hidden = hf_model.config.hidden_size
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = EncoderModel(config, PretrainedTokenizer(hf_tokenizer), PretrainedBackbone(hf_model),
                             num_labels, hidden_dim=hidden)
        _init_weights(model.classifier)
    return model


def build_encoder(config: Union[EncoderConfig, str], seed: int, num_labels: int = 2) -> EncoderModel:
    """
    Realize a registry entry.

    Entries with ``pretrained_source`` load their weights from it; the tiny
    reference encoder is initialized from ``seed`` (same seed, same weights).
    """
    if isinstance(config, str):
        config = get_config(config)
    if config.pretrained_source:
        model = _build_pretrained(config, seed, num_labels)
    else:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = EncoderModel(config, HashingTokenizer(config.vocab_size, config.lowercase),
                                 TinyBackbone(config), num_labels)
            model.apply(_init_weights)
    logger.debug("Built %s (%d parameters, seed %d)", config.name,
                 sum(p.numel() for p in model.parameters()), seed)
    return model


def count_parameters(config: EncoderConfig, num_labels: int = 2) -> int:
    """Parameter count of the reference architecture, from its shapes."""
    h, v, p, f = config.hidden_dim, config.vocab_size, config.max_positions, config.feed_forward_dim
    embeddings = v * h + p * h + 2 * h
    attention = 4 * h * h + 4 * h
    block = attention + 2 * h + (h * f + f) + (f * h + h) + 2 * h
    mlm_head = h * v + v
    classifier = h * num_labels + num_labels
    return embeddings + config.num_layers * block + mlm_head + classifier


def attach_classifier(model: EncoderModel, num_labels: int, seed: int) -> EncoderModel:
    """Replace the classification head with a freshly seeded one of ``num_labels`` outputs."""
    reference = model.classifier.weight
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        head = _new_classifier(model.classifier.in_features, num_labels)
    model.classifier = head.to(device=reference.device, dtype=reference.dtype)
    return model


def clone_model(model: EncoderModel) -> EncoderModel:
    """Independent copy of the weights; the (immutable) tokenizer is shared."""
    tokenizer = model.tokenizer
    model.tokenizer = None
    try:
        clone = copy.deepcopy(model)
    finally:
        model.tokenizer = tokenizer
    clone.tokenizer = tokenizer
    return clone


# ---- Batching and inference -----------------------------------------------

def pad_batch(sequences: Sequence[Sequence[int]], pad_id: int, max_positions: int,
              device: Optional[torch.device] = None) -> Tuple[torch.Tensor, torch.Tensor]:
    """Right-pad token-id sequences; returns (input_ids, attention_mask)."""
    if not sequences:
        raise EncoderError("empty batch")
    longest = max(len(s) for s in sequences)
    if longest > max_positions:
        raise EncoderError(f"sequence of length {longest} exceeds max_positions {max_positions}")
    input_ids = torch.full((len(sequences), longest), pad_id, dtype=torch.long)
    attention_mask = torch.zeros((len(sequences), longest), dtype=torch.long)
    for i, seq in enumerate(sequences):
        input_ids[i, :len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
        attention_mask[i, :len(seq)] = 1
    if device is not None:
        input_ids, attention_mask = input_ids.to(device), attention_mask.to(device)
    return input_ids, attention_mask


def encode_texts(model: EncoderModel, texts: Sequence[str], max_len: int) -> List[List[int]]:
    """Normalize and tokenize raw tweets for ``model``."""
    max_len = min(max_len, model.config.max_positions)
    return [model.tokenize(normalize_tweet(t), max_len) for t in texts]


def check_head(model: EncoderModel, task: TaskSpec) -> None:
    if model.num_labels != task.num_labels:
        raise EncoderError(
            f"classification head has {model.num_labels} outputs but Task {task.task_id} "
            f"has {task.num_labels} labels"
        )


def classify(model: EncoderModel, batch: Sequence[Sequence[int]], task: TaskSpec) -> np.ndarray:
    """Class-probability matrix (batch x labels) in the task's canonical label order."""
    check_head(model, task)
    input_ids, attention_mask = pad_batch(batch, model.tokenizer.pad_id, model.config.max_positions,
                                          model.device)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            logits = model.class_logits(input_ids, attention_mask)
    finally:
        model.train(was_training)
    return torch.softmax(logits.double(), dim=-1).cpu().numpy()


def classification_loss(model: EncoderModel, batch: Sequence[Sequence[int]],
                        labels: Sequence[int]) -> torch.Tensor:
    """Mean cross-entropy of the classification head over ``batch``."""
    input_ids, attention_mask = pad_batch(batch, model.tokenizer.pad_id, model.config.max_positions,
                                          model.device)
    targets = torch.as_tensor(list(labels), dtype=torch.long, device=model.device)
    return F.cross_entropy(model.class_logits(input_ids, attention_mask), targets)


# ---- Checkpoints -----------------------------------------------------------

def save_checkpoint(model: EncoderModel, path: Union[str, Path]) -> Path:
    """Self-describing checkpoint: format version, config, head size and weights."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(model.config),
        "num_labels": model.num_labels,
        "state_dict": model.state_dict(),
    }, path)
    return path


def load_checkpoint(path: Union[str, Path]) -> EncoderModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        version = payload["format_version"]
        config = EncoderConfig(**payload["config"])
        num_labels = int(payload["num_labels"])
        state = payload["state_dict"]
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")

    model = build_encoder(config, seed=0, num_labels=num_labels)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: weights do not match the {config.name} architecture: {exc}") from exc
    return model


def describe(model: EncoderModel) -> Dict[str, object]:
    """Config plus parameter count, for logs and run manifests."""
    info = asdict(model.config)
    info["num_labels"] = model.num_labels
    info["parameters"] = sum(p.numel() for p in model.parameters())
    return info
