"""
Command-line entry point.

    python cli.py preprocess   --weak-corpus weak.tsv --output-dir runs/pre
    python cli.py pretrain-mlm --corpus runs/pre/corpus.txt --output-dir runs/mlm
    python cli.py finetune     --train olid.tsv --test test.tsv [--cv 10] --output-dir runs/ft
    python cli.py ensemble     runs/ft/predictions_fold*.csv --output-dir runs/ens
    python cli.py evaluate     --gold gold.tsv --predictions runs/ens/ensemble.csv --output-dir runs/eval
    python cli.py report       runs/*/report.json --output-dir runs/table

Every subcommand takes ``--config`` (YAML), repeatable ``--set key=value``
overrides and writes ``resolved_config.yaml`` into its output directory before
doing any work. Exit codes: 0 success, 2 usage or data error, 1 internal error.
"""

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml

from pipeline.config import RunConfig, dump_resolved, load_run_config
from pipeline.corpus import (
    OLID_COLUMNS,
    LabeledExample,
    TweetRecord,
    attach_gold,
    get_task,
    kfold_split,
    load_gold_labels,
    load_olid,
    load_olid_testset,
    load_weak_corpus,
    preprocess_corpus,
    read_lines,
    write_lines,
)
from pipeline.encoder import build_encoder, describe, load_checkpoint, save_checkpoint
from pipeline.ensemble import EnsembleSpec, default_mode, tie_rate, vote
from pipeline.errors import ConfigError, PipelineError
from pipeline.evaluate import (
    EvalReport,
    baseline_predict,
    build_report,
    comparison_table,
    format_table,
    render_confusion_figure,
)
from pipeline.finetune import base_model, cross_validate, fine_tune, predict, save_epoch_metrics
from pipeline.mlm import further_pretrain, save_loss_curve
from pipeline.predictions import PredictionSet
from utils.data_processing import (
    COMPARISON_CSV,
    COMPARISON_HTML,
    COMPARISON_TEXT,
    CONFUSION_FIGURE,
    CORPUS_FILE,
    CV_SUMMARY,
    ENSEMBLE,
    EPOCH_METRICS,
    FOLD_MANIFEST,
    MLM_CHECKPOINT,
    MLM_LOSS,
    MODEL_CHECKPOINT,
    PREDICTIONS,
    PREPROCESS_STATS,
    REPORT_JSON,
    REPORT_TEXT,
    RUN_LOG,
    SUBMISSION,
    flatten_comparison,
    fold_metrics_name,
    fold_predictions_name,
)

logger = logging.getLogger("cli")

# Folds used to carve a validation split when no validation file is given.
VALIDATION_FOLDS = 10

# argparse dest -> config dot path, shared by every subcommand that defines the flag.
FLAG_KEYS = {
    "seed": "global_seed",
    "output_dir": "output_dir",
    "task": "task",
    "model": "model",
    "progress": "progress",
    "weak_corpus": "data.weak_corpus",
    "fraction": "preprocess.fraction",
    "corpus": "data.processed_corpus",
    "checkpoint": "data.checkpoint",
    "train": "data.olid_train",
    "valid": "data.olid_valid",
    "test": "data.olid_test",
    "gold": "data.gold",
    "gold_labels": "data.olid_test_labels",
    "cv": "cv_folds",
    "workers": "finetune.workers",
    "mode": "ensemble.mode",
    "tie_rule": "ensemble.tie_rule",
    "baseline": "evaluate.baseline",
    "name": "evaluate.name",
    "error_samples": "evaluate.error_samples",
}

# Training flags land in the section of the subcommand that defines them.
STAGE_FLAGS = {"epochs": "epochs", "lr": "learning_rate", "batch_size": "batch_size", "max_len": "max_len"}


# ---- Helpers ---------------------------------------------------------------

def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    values = vars(args)
    flags = {FLAG_KEYS[k]: v for k, v in values.items() if k in FLAG_KEYS}
    section = {"pretrain-mlm": "mlm", "finetune": "finetune"}.get(args.command)
    if section:
        for dest, key in STAGE_FLAGS.items():
            if dest in values:
                flags[f"{section}.{key}"] = values[dest]
    files = values.get("files")
    if files:
        flags["data.reports" if args.command == "report" else "data.predictions"] = list(files)
    if values.get("predictions"):
        flags["data.predictions"] = [values["predictions"]]
    return flags


def _require(value: Optional[Any], key: str, flag: str) -> Any:
    if value in (None, [], ""):
        raise ConfigError(f"missing input: set {key} (or pass {flag})")
    return value


def _load_prediction_inputs(path: Union[str, Path], task) -> List[Union[LabeledExample, TweetRecord]]:
    """Test tweets from either a labeled OLID TSV or the official ``id tweet`` layout."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    with path.open(encoding="utf-8-sig") as handle:
        header = handle.readline().rstrip("\r\n").split("\t")
    if [c.strip() for c in header] == OLID_COLUMNS:
        return load_olid(path, task)
    return load_olid_testset(path)


def _load_gold(config: RunConfig) -> List[LabeledExample]:
    task = get_task(config.task)
    if config.data.gold:
        return load_olid(config.data.gold, task)
    tweets = _require(config.data.olid_test, "data.gold or data.olid_test", "--gold or --test")
    labels = _require(config.data.olid_test_labels, "data.olid_test_labels", "--gold-labels")
    return attach_gold(load_olid_testset(tweets), load_gold_labels(labels, task), task)


def _write_yaml(path: Path, data: Dict[str, Any]) -> Path:
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


# ---- Subcommands -----------------------------------------------------------

def cmd_preprocess(config: RunConfig, out: Path) -> None:
    source = _require(config.data.weak_corpus, "data.weak_corpus", "--weak-corpus")
    records = load_weak_corpus(source)
    sample, stats = preprocess_corpus(records, config.preprocess.fraction, config.seeds.sample)
    write_lines(out / CORPUS_FILE, [r.text for r in sample])
    _write_yaml(out / PREPROCESS_STATS, asdict(stats))
    logger.info("Wrote %d lines to %s", stats.sample_count, out / CORPUS_FILE)


def cmd_pretrain_mlm(config: RunConfig, out: Path) -> None:
    corpus = read_lines(_require(config.data.processed_corpus, "data.processed_corpus", "--corpus"))
    task = get_task(config.task)
    if config.data.checkpoint:
        model = load_checkpoint(config.data.checkpoint)
    else:
        model = build_encoder(config.model, seed=config.seeds.init, num_labels=task.num_labels)
    logger.info("Base model: %s", describe(model))

    adapted, curve = further_pretrain(model, corpus, config.mlm, progress=config.progress)
    save_checkpoint(adapted, out / MLM_CHECKPOINT)
    save_loss_curve(curve, out / MLM_LOSS)
    logger.info("Wrote %s (%d steps)", out / MLM_CHECKPOINT, len(curve))


def _finetune_single(config: RunConfig, out: Path, train: List[LabeledExample], test, source) -> None:
    task = get_task(config.task)
    if config.data.olid_valid:
        valid = load_olid(config.data.olid_valid, task)
    else:
        folds = kfold_split(train, VALIDATION_FOLDS, config.seeds.folds)
        train, valid = folds.split(train, 0)
        logger.info("No validation file; holding out fold 0 of %d (%d examples)", VALIDATION_FOLDS, len(valid))

    model = base_model(source, task, config.seeds.init)
    result = fine_tune(model, train, valid, task, config.finetune, progress=config.progress)
    save_checkpoint(result.best_model, out / MODEL_CHECKPOINT)
    save_epoch_metrics(result, out / EPOCH_METRICS)
    if test is not None:
        predictions = predict(result.best_model, test, task, model_name=config.model,
                              max_len=config.finetune.max_len, batch_size=config.finetune.eval_batch_size)
        predictions.to_csv(out / PREDICTIONS)
        logger.info("Wrote %d predictions to %s", len(predictions), out / PREDICTIONS)


def _finetune_cv(config: RunConfig, out: Path, train: List[LabeledExample], test, source) -> None:
    if test is None:
        raise ConfigError("cross-validation needs a test set: set data.olid_test (or pass --test)")
    result = cross_validate(train, test, config.task, config.cv_folds, config.finetune, source,
                            fold_seed=config.seeds.folds, progress=config.progress)
    for outcome in result.outcomes:
        outcome.predictions.to_csv(out / fold_predictions_name(outcome.fold))
        save_epoch_metrics(outcome.epoch_metrics, out / fold_metrics_name(outcome.fold))
    result.folds.to_frame().to_csv(out / FOLD_MANIFEST, index=False, lineterminator="\n")
    result.summary().to_csv(out / CV_SUMMARY, index=False, lineterminator="\n")
    logger.info("Wrote %d fold prediction files to %s", len(result.outcomes), out)


def cmd_finetune(config: RunConfig, out: Path) -> None:
    task = get_task(config.task)
    train = load_olid(_require(config.data.olid_train, "data.olid_train", "--train"), task)
    test = _load_prediction_inputs(config.data.olid_test, task) if config.data.olid_test else None
    source = config.data.checkpoint or config.model
    if config.cv_folds:
        _finetune_cv(config, out, train, test, source)
    else:
        _finetune_single(config, out, train, test, source)


def cmd_ensemble(config: RunConfig, out: Path) -> None:
    paths = _require(config.data.predictions, "data.predictions", "prediction files")
    members = [PredictionSet.read_csv(p, config.task) for p in paths]
    mode = config.ensemble.mode or default_mode(len(members))
    spec = EnsembleSpec(members, mode=mode, tie_rule=config.ensemble.tie_rule)
    result = vote(spec)
    result.to_csv(out / ENSEMBLE)
    result.write_submission(out / SUBMISSION)
    logger.info("%s; tie rate %.4f", spec.digest, tie_rate(result))


def cmd_evaluate(config: RunConfig, out: Path) -> None:
    task = get_task(config.task)
    gold = _load_gold(config)
    if config.evaluate.baseline:
        result = baseline_predict(config.evaluate.baseline, gold, task)
    else:
        paths = _require(config.data.predictions, "data.predictions", "--predictions or --baseline")
        if len(paths) != 1:
            raise ConfigError(f"evaluate takes one prediction file, got {len(paths)}")
        result = PredictionSet.read_csv(paths[0], task)

    report = build_report(gold, result, task, model_name=config.evaluate.name,
                          n_samples=config.evaluate.error_samples)
    report.save(out / REPORT_JSON)
    table = report.to_table()
    (out / REPORT_TEXT).write_text(table, encoding="utf-8")
    render_confusion_figure(report.matrix, out / CONFUSION_FIGURE,
                            title=f"{report.model_name} · Task {task.task_id}")
    sys.stdout.write(table)


def cmd_report(config: RunConfig, out: Path) -> None:
    # The components package imports streamlit.
    from components.charts import comparison_chart

    paths = _require(config.data.reports, "data.reports", "report files")
    reports = [EvalReport.load(p) for p in paths]
    table = comparison_table(reports)
    text = format_table(table)
    (out / COMPARISON_TEXT).write_text(text, encoding="utf-8")
    flatten_comparison(table).to_csv(out / COMPARISON_CSV, lineterminator="\n")
    fig = comparison_chart(table, title=f"Task {reports[0].task_id}")
    fig.write_html(out / COMPARISON_HTML, include_plotlyjs="cdn", div_id="comparison", full_html=True)
    sys.stdout.write(text)


COMMANDS = {
    "preprocess": cmd_preprocess,
    "pretrain-mlm": cmd_pretrain_mlm,
    "finetune": cmd_finetune,
    "ensemble": cmd_ensemble,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


# ---- Argument parsing ------------------------------------------------------

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file (a resolved_config.yaml replays a run)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. finetune.epochs=3 (repeatable)")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--output-dir", help="directory for all outputs of this run")
    parser.add_argument("--task", choices=["A", "B", "C"])
    parser.add_argument("--model", help="encoder registry name")
    parser.add_argument("--no-progress", dest="progress", action="store_const", const=False, default=None,
                        help="disable progress bars")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--max-len", type=int)
    parser.add_argument("--checkpoint", help="start from this checkpoint instead of a fresh registry model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cli.py", description="Offensive language detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize, deduplicate and sample the weak corpus")
    _common(p)
    p.add_argument("--weak-corpus", help="weakly-labeled TSV (id, text, average, std)")
    p.add_argument("--fraction", type=float, help="share of deduplicated records to keep")

    p = sub.add_parser("pretrain-mlm", help="further pre-train an encoder with masked language modeling")
    _common(p)
    _training(p)
    p.add_argument("--corpus", help="processed corpus, one text per line")

    p = sub.add_parser("finetune", help="fine-tune on OLID, once or with k-fold cross-validation")
    _common(p)
    _training(p)
    p.add_argument("--train", help="labeled OLID TSV")
    p.add_argument("--valid", help="labeled OLID TSV for epoch selection")
    p.add_argument("--test", help="tweets to predict (official test layout or labeled TSV)")
    p.add_argument("--cv", type=int, metavar="K", help="train K fold models, one prediction file each")
    p.add_argument("--workers", type=int, help="folds trained in parallel")

    p = sub.add_parser("ensemble", help="combine prediction files by voting")
    _common(p)
    p.add_argument("files", nargs="*", help="prediction CSV files")
    p.add_argument("--mode", choices=["hard", "soft"])
    p.add_argument("--tie-rule", choices=["soft_fallback", "canonical_order"])

    p = sub.add_parser("evaluate", help="score predictions (or a baseline) against gold labels")
    _common(p)
    p.add_argument("--gold", help="labeled OLID TSV")
    p.add_argument("--test", help="official test tweets (with --gold-labels)")
    p.add_argument("--gold-labels", help="headerless id,label gold file")
    p.add_argument("--predictions", help="prediction or ensemble CSV")
    p.add_argument("--baseline", choices=["all_not", "all_off", "majority_class"])
    p.add_argument("--name", help="model name in the report")
    p.add_argument("--error-samples", type=int, help="false positives / negatives to keep")

    p = sub.add_parser("report", help="compare several evaluation reports")
    _common(p)
    p.add_argument("files", nargs="*", help="report.json files")
    return parser


# ---- Logging ---------------------------------------------------------------

def _console_handler(verbose: bool) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.DEBUG if verbose else logging.INFO)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    return handler


def _file_handler(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / RUN_LOG, mode="a", encoding="utf-8")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    return handler


# ---- Entry point -----------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    root = logging.getLogger()
    previous_level = root.level
    handlers = [_console_handler(args.verbose)]
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    root.addHandler(handlers[0])
    try:
        config = load_run_config(args.config, args.set, _flags(args))
        out = Path(config.output_dir)
        dump_resolved(config, out)
        handlers.append(_file_handler(out))
        root.addHandler(handlers[-1])
        logger.debug("%s with seeds %s", args.command, asdict(config.seeds))

        COMMANDS[args.command](config, out)
        return 0
    except PipelineError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 2
    except Exception as exc:
        logger.debug("unexpected failure", exc_info=True)
        logger.error("internal error: %s: %s", type(exc).__name__, exc)
        return 1
    finally:
        for handler in handlers:
            root.removeHandler(handler)
            handler.close()
        root.setLevel(previous_level)


if __name__ == "__main__":
    sys.exit(main())
