"""
Run configuration.

Layers, lowest precedence first: dataclass defaults, a YAML file, ``--set``
dot-path overrides, subcommand flags, and ``OFFENSE_PIPELINE_SEED`` for the
global seed. Stage seeds left unset are derived from the global seed.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Set, Tuple, Union

import yaml

from pipeline.corpus import get_task
from pipeline.encoder import get_config
from pipeline.ensemble import MODES, TIE_RULES
from pipeline.errors import ConfigError, PipelineError
from pipeline.evaluate import BASELINES, DEFAULT_ERROR_SAMPLES
from pipeline.finetune import CV_BATCH_SIZE, FineTuneConfig
from pipeline.mlm import MlmTrainConfig
from pipeline.seeding import derive_seed

logger = logging.getLogger(__name__)

SEED_ENV = "OFFENSE_PIPELINE_SEED"
RESOLVED_CONFIG = "resolved_config.yaml"


@dataclass(frozen=True)
class DataPaths:
    olid_train: Optional[str] = None
    olid_valid: Optional[str] = None
    olid_test: Optional[str] = None
    olid_test_labels: Optional[str] = None
    gold: Optional[str] = None
    weak_corpus: Optional[str] = None
    processed_corpus: Optional[str] = None
    checkpoint: Optional[str] = None
    predictions: Optional[List[str]] = None
    reports: Optional[List[str]] = None


@dataclass(frozen=True)
class PreprocessConfig:
    fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"preprocess.fraction must be in (0, 1], got {self.fraction}")


@dataclass(frozen=True)
class EnsembleConfig:
    # None picks soft voting for two members, hard voting otherwise.
    mode: Optional[str] = None
    tie_rule: str = "soft_fallback"

    def __post_init__(self):
        if self.mode is not None and self.mode not in MODES:
            raise ConfigError(f"unknown ensemble mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.tie_rule not in TIE_RULES:
            raise ConfigError(f"unknown tie rule {self.tie_rule!r}; expected one of {', '.join(TIE_RULES)}")


@dataclass(frozen=True)
class EvaluateConfig:
    baseline: Optional[str] = None
    name: Optional[str] = None
    error_samples: int = DEFAULT_ERROR_SAMPLES

    def __post_init__(self):
        if self.baseline is not None and self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline {self.baseline!r}; expected one of {', '.join(BASELINES)}")
        if self.error_samples < 0:
            raise ConfigError(f"evaluate.error_samples must be >= 0, got {self.error_samples}")


@dataclass(frozen=True)
class SeedConfig:
    sample: Optional[int] = None
    mlm: Optional[int] = None
    init: Optional[int] = None
    finetune: Optional[int] = None
    folds: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    task: str = "A"
    model: str = "tiny-reference"
    output_dir: str = "runs/default"
    global_seed: int = 0
    cv_folds: Optional[int] = None
    progress: bool = True
    data: DataPaths = field(default_factory=DataPaths)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    mlm: MlmTrainConfig = field(default_factory=MlmTrainConfig)
    finetune: FineTuneConfig = field(default_factory=FineTuneConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "data": DataPaths,
    "preprocess": PreprocessConfig,
    "mlm": MlmTrainConfig,
    "finetune": FineTuneConfig,
    "ensemble": EnsembleConfig,
    "evaluate": EvaluateConfig,
    "seeds": SeedConfig,
}


def _coerce_field(f, value: Any, key: str) -> Any:
    # YAML 1.1 reads exponent floats without a dot ("5e-6") as strings.
    if isinstance(value, str) and isinstance(f.default, float):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    return value


def _build(cls, data: Any, prefix: str = ""):
    if not isinstance(data, Mapping):
        raise ConfigError(f"config section {prefix.rstrip('.') or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for name, value in data.items():
        section = _SECTIONS.get(name) if cls is RunConfig else None
        if section:
            kwargs[name] = _build(section, value, f"{name}.")
        else:
            kwargs[name] = _coerce_field(known[name], value, prefix + name)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid value in config section {prefix.rstrip('.') or '<root>'}: {exc}") from exc


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    return _build(RunConfig, data)


def _merge(base: Dict[str, Any], update: Mapping[str, Any], prefix: str, explicit: Set[str]) -> None:
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            _merge(base[key], value, f"{prefix}{key}.", explicit)
        else:
            base[key] = value
            explicit.add(prefix + key)


def _coerce(existing: Any, raw: str) -> Any:
    value = yaml.safe_load(raw) if raw.strip() else None
    if isinstance(existing, bool) or existing is None:
        return value
    if isinstance(existing, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(existing, str) and value is not None and not isinstance(value, str):
        return raw
    return value


def set_path(data: Dict[str, Any], dotted: str, value: Any) -> None:
    """Assign ``value`` at a dot path of an existing key."""
    *parents, leaf = dotted.split(".")
    node = data
    for part in parents:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    if leaf not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[leaf] = value


def _get_path(data: Dict[str, Any], dotted: str) -> Any:
    node: Any = data
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    return node


def parse_override(item: str) -> Tuple[str, str]:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    return key.strip(), raw


def read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return loaded


def resolve_seeds(config: RunConfig) -> RunConfig:
    """Fill unset stage seeds from the global seed and mirror them into the stage configs."""
    seeds = {
        f.name: getattr(config.seeds, f.name)
        if getattr(config.seeds, f.name) is not None else derive_seed(config.global_seed, f.name)
        for f in fields(SeedConfig)
    }
    return replace(
        config,
        seeds=SeedConfig(**seeds),
        mlm=replace(config.mlm, seed=seeds["mlm"]),
        finetune=replace(config.finetune, seed=seeds["finetune"]),
    )


def load_run_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (),
                    flags: Optional[Mapping[str, Any]] = None,
                    env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """
    Layer defaults, YAML, ``--set`` overrides, flags (dot-path keys; None
    means not given) and the seed environment variable into a RunConfig.
    """
    env = os.environ if env is None else env
    data = RunConfig().to_dict()
    explicit: Set[str] = set()

    if path is not None:
        _merge(data, read_yaml(path), "", explicit)
    for item in overrides:
        key, raw = parse_override(item)
        existing = _get_path(data, key)
        as_text = key.startswith("data.") and not raw.lstrip().startswith("[")
        set_path(data, key, raw if as_text else _coerce(existing, raw))
        explicit.add(key)
    for key, value in (flags or {}).items():
        if value is not None:
            set_path(data, key, value)
            explicit.add(key)

    raw_seed = env.get(SEED_ENV)
    if raw_seed not in (None, ""):
        try:
            data["global_seed"] = int(raw_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw_seed!r}") from None

    if data.get("cv_folds") and "finetune.batch_size" not in explicit:
        data["finetune"]["batch_size"] = CV_BATCH_SIZE

    config = resolve_seeds(from_dict(data))
    validate(config)
    return config


def validate(config: RunConfig) -> None:
    try:
        get_task(config.task)
        get_config(config.model)
    except PipelineError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(config.global_seed, int) or isinstance(config.global_seed, bool):
        raise ConfigError(f"global_seed must be an integer, got {config.global_seed!r}")
    if config.cv_folds is not None and config.cv_folds < 2:
        raise ConfigError(f"cv_folds must be at least 2, got {config.cv_folds}")


def dump_resolved(config: RunConfig, output_dir: Optional[Union[str, Path]] = None) -> Path:
    """Write ``resolved_config.yaml`` (every default and derived seed spelled out)."""
    out = Path(output_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / RESOLVED_CONFIG
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=False), encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path
