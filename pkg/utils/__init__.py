"""
Utils package for the run viewer.
Contains artifact loading and shaping functions.
"""

from .data_processing import (
    list_runs,
    load_run,
    load_epoch_metrics,
    load_loss_curve,
    load_predictions,
    load_comparison,
    calculate_kpis,
    get_epoch_trends,
    per_class_frame,
    error_sample_frame,
    prediction_distribution,
    flatten_comparison,
    majority_baseline_f1,
)

__all__ = [
    'list_runs',
    'load_run',
    'load_epoch_metrics',
    'load_loss_curve',
    'load_predictions',
    'load_comparison',
    'calculate_kpis',
    'get_epoch_trends',
    'per_class_frame',
    'error_sample_frame',
    'prediction_distribution',
    'flatten_comparison',
    'majority_baseline_f1',
]
