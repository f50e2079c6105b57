"""
Exception hierarchy for the pipeline.

Every error carries the process exit code the CLI should use: 2 for bad input
(usage, data, configuration), 1 for failures during training.
"""

from typing import Iterable


class PipelineError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ConfigError(PipelineError):
    """Invalid or inconsistent configuration value."""


class CorpusError(PipelineError):
    """Malformed corpus file or record."""


class EncoderError(PipelineError):
    """Bad encoder configuration, registry lookup or model input."""


class CheckpointError(EncoderError):
    """Checkpoint is missing, unreadable or inconsistent."""


class EnsembleError(PipelineError):
    """Ensemble members do not line up."""


class EvaluationError(PipelineError):
    """Gold and predictions cannot be compared."""


class TrainingError(PipelineError):
    """Training diverged or a training run failed."""

    exit_code = 1


class FoldError(TrainingError):
    """A cross-validation fold failed; wraps the original error."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold} failed: {cause}")
        self.fold = fold
        self.cause = cause
        if isinstance(cause, PipelineError):
            self.exit_code = cause.exit_code

    def __reduce__(self):
        # Crosses process boundaries when folds run in joblib workers.
        return FoldError, (self.fold, self.cause)


def describe_ids(ids: Iterable[str], limit: int = 10) -> str:
    """Short, deterministic rendering of an id collection for error messages."""
    ordered = sorted(ids)
    shown = ", ".join(ordered[:limit])
    if len(ordered) > limit:
        shown += f", ... ({len(ordered) - limit} more)"
    return f"[{shown}]"
