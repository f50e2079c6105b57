"""
Offensive language detection pipeline.
Corpus handling, encoders, MLM further pre-training, fine-tuning,
ensembling and evaluation.
"""

from .errors import PipelineError
from .corpus import TASK_A, TASK_B, TASK_C, LabeledExample, TweetRecord, get_task
from .encoder import MODEL_REGISTRY, build_encoder, load_checkpoint, save_checkpoint
from .predictions import PredictionSet
from .ensemble import EnsembleSpec, vote
from .evaluate import EvalReport, build_report
from .mlm import further_pretrain
from .finetune import cross_validate, cross_validated_predict, fine_tune, predict
from .config import RunConfig, load_run_config

__all__ = [
    "PipelineError",
    "TASK_A",
    "TASK_B",
    "TASK_C",
    "LabeledExample",
    "TweetRecord",
    "get_task",
    "MODEL_REGISTRY",
    "build_encoder",
    "load_checkpoint",
    "save_checkpoint",
    "PredictionSet",
    "EnsembleSpec",
    "vote",
    "EvalReport",
    "build_report",
    "further_pretrain",
    "cross_validate",
    "cross_validated_predict",
    "fine_tune",
    "predict",
    "RunConfig",
    "load_run_config",
]
