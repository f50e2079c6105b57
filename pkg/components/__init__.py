"""
Components package for the run viewer.
Contains visualization and UI components.
"""

from .indicator_cards import render_metric, render_metric_row, render_score_bar
from .filters import render_sidebar_filters, apply_filters, render_active_filters
from .charts import (
    per_class_bars, confusion_heatmap, epoch_curve, loss_curve,
    label_distribution, comparison_chart,
)

__all__ = [
    "render_metric",
    "render_metric_row",
    "render_score_bar",
    "render_sidebar_filters",
    "apply_filters",
    "render_active_filters",
    "per_class_bars",
    "confusion_heatmap",
    "epoch_curve",
    "loss_curve",
    "label_distribution",
    "comparison_chart",
]
