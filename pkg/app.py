"""
Offensive Language Run Viewer
Browse the artifacts the pipeline CLI writes: evaluation scores, confusion
matrices, fine-tuning curves, the MLM loss curve and error samples.

Clean, minimal Streamlit interface. Point OFFENSE_RUNS_DIR at the directory
holding run output directories (default: runs/), or pass
``-- --runs DIR`` after the script name.
"""

import argparse
import os
import sys
from pathlib import Path

import streamlit as st

from components.indicator_cards import render_metric_row, render_score_bar
from components.filters import render_sidebar_filters, apply_filters, render_active_filters
from components.charts import (
    per_class_bars, confusion_heatmap, epoch_curve, loss_curve, label_distribution,
)
from utils.data_processing import (
    list_runs, load_run, calculate_kpis, get_epoch_trends, per_class_frame,
    error_sample_frame, prediction_distribution, majority_baseline_f1,
)
from utils.theme import PRIMARY, GOOD, WARN, label_color

st.set_page_config(
    page_title="Offensive Language Run Viewer",
    page_icon="◆",
    layout="wide",
    initial_sidebar_state="expanded",
)

PLOTLY_CONFIG = {"displayModeBar": False, "responsive": True}
RUNS_ENV = "OFFENSE_RUNS_DIR"


def load_css():
    css_file = os.path.join(os.path.dirname(__file__), "assets", "custom.css")
    if os.path.exists(css_file):
        with open(css_file) as f:
            st.markdown(f"<style>{f.read()}</style>", unsafe_allow_html=True)


def runs_root() -> Path:
    """``streamlit run app.py -- --runs DIR`` wins over OFFENSE_RUNS_DIR."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--runs")
    args, _ = parser.parse_known_args(sys.argv[1:])
    default = os.environ.get(RUNS_ENV, os.path.join(os.path.dirname(__file__), "runs"))
    return Path(args.runs or default)


@st.cache_data
def load_data(run_dir: str):
    return load_run(run_dir)


def section(title: str, sub: str = "") -> None:
    """Render a quiet section heading."""
    sub_html = f'<div class="section-sub">{sub}</div>' if sub else '<div style="height:12px"></div>'
    st.markdown(f'<div class="section-title">{title}</div>{sub_html}', unsafe_allow_html=True)


def render_evaluation(run, filters) -> None:
    report = run["report"]
    if report is None:
        st.info("This run has no report.json yet. Run the evaluate subcommand on it.")
        return
    kpis = calculate_kpis(report)
    baseline = majority_baseline_f1(report)

    render_metric_row([
        {"label": "Macro F1", "value": kpis["macro_f1"], "accent": PRIMARY,
         "caption": f"Task {kpis['task']} · {kpis['model']}"},
        {"label": "Accuracy", "value": kpis["accuracy"], "accent": "#3B82F6",
         "caption": f"{kpis['n_examples']:,} examples"},
        {"label": "Weakest class", "value": kpis["weakest_class"],
         "accent": label_color(kpis["weakest_class"]), "caption": f"F1 {kpis['weakest_f1']:.2f}"},
        {"label": "FP / FN", "value": f"{kpis['false_positives']:,} / {kpis['false_negatives']:,}",
         "accent": WARN, "caption": "for the positive class"},
    ])
    st.markdown("<div style='height:26px'></div>", unsafe_allow_html=True)

    left, right = st.columns([1.1, 1], gap="large")
    with left:
        section("Per-class scores", "Precision · Recall · F1 (percent)")
        st.plotly_chart(per_class_bars(per_class_frame(report)), width="stretch", config=PLOTLY_CONFIG)
    with right:
        section("Confusion matrix", "Shading is the share of each gold row")
        st.plotly_chart(confusion_heatmap(report.matrix), width="stretch", config=PLOTLY_CONFIG)

    section("Against the majority-class baseline", "")
    render_score_bar("Macro F1", report.macro_f1, reference=baseline, accent=GOOD)
    for label, scores in report.per_class.items():
        render_score_bar(f"{label} F1", scores.f1, accent=label_color(label))

    st.markdown("<div style='height:18px'></div>", unsafe_allow_html=True)
    section("Error samples", "First false positives and false negatives by id")
    samples = apply_filters(error_sample_frame(report), filters)
    if samples.empty:
        st.caption("No samples match.")
    else:
        st.dataframe(samples, width="stretch", hide_index=True)


def render_training(run) -> None:
    metrics = run["epoch_metrics"]
    curve = run["loss_curve"]
    if metrics.empty and curve is None:
        st.info("No fine-tuning or MLM artifacts in this run.")
        return

    if not metrics.empty:
        trends = get_epoch_trends(metrics)
        c1, c2 = st.columns(2, gap="large")
        with c1:
            section("Validation macro F1", "Stars mark the selected epoch")
            st.plotly_chart(epoch_curve(trends, "macro_f1"), width="stretch", config=PLOTLY_CONFIG)
        with c2:
            section("Training loss", "Mean over each epoch")
            st.plotly_chart(epoch_curve(trends, "train_loss"), width="stretch", config=PLOTLY_CONFIG)

    if run["cv_summary"] is not None:
        section("Cross-validation folds", "")
        st.dataframe(run["cv_summary"], width="stretch", hide_index=True)

    if curve is not None:
        st.markdown("<div style='height:18px'></div>", unsafe_allow_html=True)
        section("Masked-language-model loss", "Per optimizer step, with a rolling mean")
        st.plotly_chart(loss_curve(curve), width="stretch", config=PLOTLY_CONFIG)

    if run["preprocess"]:
        section("Corpus preprocessing", "")
        stats = run["preprocess"]
        render_metric_row([
            {"label": "Input records", "value": stats.get("input_count", 0)},
            {"label": "After deduplication", "value": stats.get("dedup_count", 0), "accent": "#3B82F6"},
            {"label": "Sampled lines", "value": stats.get("sample_count", 0), "accent": GOOD,
             "caption": f"fraction {stats.get('fraction', 0)}"},
        ])


def render_predictions(run) -> None:
    predictions = run["predictions"]
    if predictions is None:
        st.info("No predictions.csv or ensemble.csv in this run.")
        return
    section("Predicted labels", f"{len(predictions):,} test examples")
    st.plotly_chart(label_distribution(prediction_distribution(predictions, run["task"])),
                    width="stretch", config=PLOTLY_CONFIG)
    if "tie_flag" in predictions:
        ties = int(predictions["tie_flag"].astype(int).sum())
        st.caption(f"Ensemble ties resolved: {ties:,} ({ties / max(len(predictions), 1) * 100:.1f}%)")
    st.dataframe(predictions, width="stretch", hide_index=True)


def main():
    load_css()
    root = runs_root()
    runs = list_runs(root)

    st.markdown(
        """
        <div style="margin-bottom:14px;">
            <h1 style="font-size:30px;margin:0;">Offensive Language Run Viewer</h1>
            <p style="font-size:15px;color:#94A3B8;margin:6px 0 0 0;">
                Scores, curves and errors of offensive-language classification runs
            </p>
        </div>
        """,
        unsafe_allow_html=True,
    )

    if not runs:
        st.info(f"No runs found under {root}. Set {RUNS_ENV} or run the pipeline CLI first.")
        return

    filters = render_sidebar_filters(runs, root)
    render_active_filters(filters)
    run = load_data(str(root / filters["run"]))

    tab_eval, tab_train, tab_pred = st.tabs(["Evaluation", "Training", "Predictions"])
    with tab_eval:
        st.markdown("<div style='height:8px'></div>", unsafe_allow_html=True)
        render_evaluation(run, filters)
    with tab_train:
        st.markdown("<div style='height:8px'></div>", unsafe_allow_html=True)
        render_training(run)
    with tab_pred:
        st.markdown("<div style='height:8px'></div>", unsafe_allow_html=True)
        render_predictions(run)

    st.markdown(
        """
        <div class="dashboard-footer">
            Offensive Language Run Viewer · Built with Streamlit
        </div>
        """,
        unsafe_allow_html=True,
    )


if __name__ == "__main__":
    main()
