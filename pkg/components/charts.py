"""
Chart builders for the run viewer and the comparison report.

Minimal, consistent Plotly figures (mostly bars, a heatmap and two line
charts) styled through utils.theme.style_fig.
"""

from typing import Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from pipeline.evaluate import ConfusionMatrix
from utils.theme import (
    HEATMAP_SCALE, METRIC_COLORS, PRIMARY, INK, INK_SOFT, MUTED, SEQUENCE,
    label_color, style_fig,
)


def per_class_bars(scores: pd.DataFrame) -> go.Figure:
    """Grouped bars of precision / recall / F1 per label (long-form frame from per_class_frame)."""
    fig = go.Figure()
    for metric in ("precision", "recall", "f1"):
        part = scores[scores["metric"] == metric]
        fig.add_trace(go.Bar(
            x=list(part["label"]),
            y=list(part["value"]),
            name=metric.capitalize() if metric != "f1" else "F1",
            marker=dict(color=METRIC_COLORS[metric], line=dict(width=0)),
            text=[f"{v:.1f}" if pd.notna(v) else "-" for v in part["value"]],
            textposition="outside",
            textfont=dict(size=11, color=INK_SOFT),
            hovertemplate="%{x} · " + metric + ": %{y:.2f}<extra></extra>",
        ))
    style_fig(fig, height=320, show_legend=True)
    fig.update_layout(barmode="group", margin=dict(l=8, r=8, t=36, b=8))
    fig.update_yaxes(range=[0, 110], title_text="%")
    fig.update_xaxes(tickfont=dict(size=14, color=INK))
    return fig


def confusion_heatmap(matrix: ConfusionMatrix) -> go.Figure:
    """Gold labels down, predicted labels across, raw counts annotated."""
    labels = list(matrix.labels)
    counts = matrix.counts
    row_totals = np.maximum(counts.sum(axis=1, keepdims=True), 1)
    share = counts / row_totals

    fig = go.Figure(go.Heatmap(
        z=share,
        x=labels,
        y=labels,
        text=counts,
        texttemplate="%{text}",
        textfont=dict(size=14),
        colorscale=HEATMAP_SCALE,
        zmin=0,
        zmax=1,
        showscale=False,
        hovertemplate="gold %{y} · predicted %{x}: %{text}<extra></extra>",
    ))
    style_fig(fig, height=120 + 70 * len(labels), show_legend=False, y_grid=False)
    fig.update_xaxes(title_text="Predicted", side="top", tickfont=dict(size=13, color=INK))
    fig.update_yaxes(title_text="Gold", autorange="reversed", tickfont=dict(size=13, color=INK))
    return fig


def epoch_curve(trends: pd.DataFrame, metric: str = "macro_f1") -> go.Figure:
    """One line per fold (or the single run) with the selected epoch marked."""
    fig = go.Figure()
    for i, (fold, group) in enumerate(trends.groupby("fold")):
        name = "run" if fold < 0 else f"fold {fold}"
        color = SEQUENCE[i % len(SEQUENCE)]
        fig.add_trace(go.Scatter(
            x=group["epoch"],
            y=group[metric],
            name=name,
            mode="lines+markers",
            line=dict(color=color, width=2),
            marker=dict(size=6),
            hovertemplate=name + " · epoch %{x}: %{y:.4f}<extra></extra>",
        ))
        best = group[group["is_best"]]
        fig.add_trace(go.Scatter(
            x=best["epoch"],
            y=best[metric],
            mode="markers",
            marker=dict(size=13, color=color, symbol="star"),
            showlegend=False,
            hovertemplate=name + " · selected epoch %{x}<extra></extra>",
        ))
    style_fig(fig, height=300, show_legend=True)
    fig.update_layout(margin=dict(l=8, r=8, t=36, b=8))
    fig.update_xaxes(title_text="Epoch", dtick=1)
    return fig


def loss_curve(curve: pd.DataFrame) -> go.Figure:
    """Raw MLM loss per step (faint) under its rolling mean."""
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=curve["step"],
        y=curve["loss"],
        name="Loss",
        mode="lines",
        line=dict(color="#C7D2FE", width=1),
        hovertemplate="step %{x}: %{y:.4f}<extra></extra>",
    ))
    if "smoothed" in curve:
        fig.add_trace(go.Scatter(
            x=curve["step"],
            y=curve["smoothed"],
            name="Rolling mean",
            mode="lines",
            line=dict(color=PRIMARY, width=2.5, shape="spline"),
            hovertemplate="step %{x}: %{y:.4f}<extra></extra>",
        ))
    style_fig(fig, height=300, show_legend=True)
    fig.update_layout(margin=dict(l=8, r=8, t=36, b=8))
    fig.update_xaxes(title_text="Step")
    return fig


def label_distribution(summary: pd.DataFrame, height: int = 220) -> go.Figure:
    """Sorted horizontal bars of predicted labels (frame from prediction_distribution)."""
    summary = summary.sort_values("count", ascending=True)
    total = max(int(summary["count"].sum()), 1)

    fig = go.Figure(go.Bar(
        y=list(summary["label"]),
        x=list(summary["count"]),
        orientation="h",
        marker=dict(color=[label_color(label) for label in summary["label"]], line=dict(width=0)),
        text=[f"{int(v):,}  ·  {v / total * 100:.0f}%" for v in summary["count"]],
        textposition="outside",
        textfont=dict(size=12, color=INK_SOFT),
        hovertemplate="%{y}: %{x:,}<extra></extra>",
        width=0.62,
    ))
    style_fig(fig, height=height, show_legend=False, y_grid=False)
    fig.update_xaxes(visible=False, range=[0, max(summary["count"].max(), 1) * 1.22])
    fig.update_yaxes(tickfont=dict(size=13, color=INK))
    fig.update_layout(margin=dict(l=8, r=72, t=8, b=8))
    return fig


def comparison_chart(table: pd.DataFrame, title: Optional[str] = None) -> go.Figure:
    """Macro F1 and accuracy per model, from a comparison table (models in the index)."""
    models = [str(m) for m in table.index]
    fig = go.Figure()
    fig.add_trace(go.Bar(
        y=models,
        x=list(table[("Macro F1", "")]),
        name="Macro F1",
        orientation="h",
        marker=dict(color=PRIMARY, line=dict(width=0)),
        text=[f"{v:.2f}" for v in table[("Macro F1", "")]],
        textposition="outside",
        hovertemplate="%{y} · Macro F1: %{x:.2f}<extra></extra>",
    ))
    fig.add_trace(go.Bar(
        y=models,
        x=list(table[("Acc.", "")]),
        name="Accuracy",
        orientation="h",
        marker=dict(color="#C7D2FE", line=dict(width=0)),
        text=[f"{v:.2f}" for v in table[("Acc.", "")]],
        textposition="outside",
        hovertemplate="%{y} · Accuracy: %{x:.2f}<extra></extra>",
    ))
    style_fig(fig, height=140 + 60 * len(models), show_legend=True, y_grid=False, x_grid=True)
    fig.update_layout(barmode="group", margin=dict(l=8, r=48, t=48 if title else 36, b=8))
    if title:
        fig.update_layout(title=dict(text=title, font=dict(size=15, color=INK), x=0))
    fig.update_xaxes(range=[0, 105], tickfont=dict(size=12, color=MUTED))
    fig.update_yaxes(autorange="reversed", tickfont=dict(size=13, color=INK))
    return fig
