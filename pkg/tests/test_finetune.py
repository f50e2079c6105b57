from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
import torch

import pipeline
from pipeline.corpus import TASK_A, TASK_C, LabeledExample, TweetRecord
from pipeline.encoder import build_encoder, save_checkpoint
from pipeline.ensemble import cv_ensemble
from pipeline.errors import CheckpointError, ConfigError, CorpusError, EncoderError, FoldError
from pipeline.evaluate import build_report
from pipeline.finetune import (
    FineTuneConfig,
    base_model,
    cross_validate,
    cross_validated_predict,
    fine_tune,
    predict,
    save_epoch_metrics,
    score_examples,
)
from pipeline.seeding import derive_seed
from pipeline.synthetic import to_examples, trigger_corpus

from conftest import TINY_FINETUNE_LR


@pytest.fixture
def split(train_examples):
    return train_examples[:120], train_examples[120:]


def fast_config(**overrides):
    values = dict(epochs=2, learning_rate=TINY_FINETUNE_LR, batch_size=8, seed=3)
    values.update(overrides)
    return FineTuneConfig(**values)


def test_config_defaults():
    config = FineTuneConfig()
    assert (config.epochs, config.learning_rate, config.batch_size, config.max_len) == (6, 5e-6, 4, 128)
    assert config.selection_metric == "macro_f1"


@pytest.mark.parametrize("kwargs", [
    {"epochs": 0}, {"learning_rate": -1e-5}, {"batch_size": 0}, {"lr_schedule": "cosine"},
    {"selection_metric": "accuracy"}, {"warmup_ratio": 1.0}, {"early_stopping_patience": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        FineTuneConfig(**kwargs)


def test_fine_tune_returns_best_epoch(tiny_model, split):
    train, valid = split
    before = {k: v.clone() for k, v in tiny_model.state_dict().items()}
    result = fine_tune(tiny_model, train, valid, TASK_A, fast_config(epochs=3))

    assert [m.epoch for m in result.epoch_metrics] == [1, 2, 3]
    scores = [m.macro_f1 for m in result.epoch_metrics]
    assert result.best_epoch == scores.index(max(scores)) + 1
    assert result.best_metrics.macro_f1 == max(scores)
    assert 0.0 <= result.best_metrics.accuracy <= 1.0
    assert all(torch.equal(before[k], v) for k, v in tiny_model.state_dict().items())

    f1, acc = score_examples(result.best_model, valid, TASK_A)
    assert f1 == pytest.approx(result.best_metrics.macro_f1)
    assert acc == pytest.approx(result.best_metrics.accuracy)


def test_zero_learning_rate_keeps_metrics_constant(tiny_model, split):
    train, valid = split
    result = fine_tune(tiny_model, train, valid, TASK_A, fast_config(epochs=3, learning_rate=0.0))
    assert len({(m.macro_f1, m.accuracy) for m in result.epoch_metrics}) == 1
    # Equal scores keep the earliest epoch.
    assert result.best_epoch == 1
    for key, value in tiny_model.state_dict().items():
        assert torch.equal(result.best_model.state_dict()[key], value)


def test_early_stopping(tiny_model, split):
    train, valid = split
    result = fine_tune(tiny_model, train, valid, TASK_A,
                       fast_config(epochs=5, learning_rate=0.0, early_stopping_patience=1))
    assert len(result.epoch_metrics) == 2


def test_fine_tune_is_deterministic(split):
    train, valid = split
    runs = [fine_tune(build_encoder("tiny-reference", seed=1), train, valid, TASK_A, fast_config())
            for _ in range(2)]
    assert runs[0].epoch_metrics == runs[1].epoch_metrics
    for key, value in runs[0].best_model.state_dict().items():
        assert torch.equal(runs[1].best_model.state_dict()[key], value)


def test_linear_schedule_runs(tiny_model, split):
    train, valid = split
    result = fine_tune(tiny_model, train, valid, TASK_A,
                       fast_config(epochs=1, lr_schedule="linear", warmup_ratio=0.1, grad_clip=1.0))
    assert result.best_epoch == 1


def test_fine_tune_input_errors(tiny_model, split):
    train, valid = split
    with pytest.raises(CorpusError, match="share ids"):
        fine_tune(tiny_model, train, train[:5], TASK_A, fast_config())
    with pytest.raises(CorpusError):
        fine_tune(tiny_model, train, [], TASK_A, fast_config())
    with pytest.raises(CorpusError):
        fine_tune(tiny_model, train + [LabeledExample("x", "text", "TIN")], valid, TASK_A, fast_config())
    with pytest.raises(EncoderError):
        fine_tune(tiny_model, train, valid, TASK_C, fast_config())


def test_predict_covers_inputs_in_order(tiny_model, test_examples):
    records = [TweetRecord(e.id, e.text) for e in test_examples]
    predictions = predict(tiny_model, records, TASK_A, model_name="tiny")
    assert predictions.ids == [e.id for e in test_examples]
    assert predictions.model_name == "tiny"
    assert predictions.has_probabilities
    assert predictions.probability_matrix().shape == (len(records), 2)

    strings = predict(tiny_model, ["one", "two"], TASK_A)
    assert strings.ids == ["0", "1"]
    assert strings.model_name == "tiny-reference"
    assert len(predict(tiny_model, [], TASK_A)) == 0


def test_save_epoch_metrics(tmp_path, tiny_model, split):
    train, valid = split
    result = fine_tune(tiny_model, train, valid, TASK_A, fast_config(epochs=1))
    frame = pd.read_csv(save_epoch_metrics(result, tmp_path / "epoch_metrics.csv"))
    assert list(frame.columns) == ["epoch", "macro_f1", "accuracy", "train_loss"]
    assert frame["epoch"].tolist() == [1]


def test_base_model_from_checkpoint(tmp_path, tiny_model):
    path = save_checkpoint(tiny_model, tmp_path / "mlm_model.pt")
    model = base_model(path, TASK_C, seed=4)
    assert model.num_labels == 3
    assert torch.equal(model.backbone.token_embedding.weight, tiny_model.backbone.token_embedding.weight)
    assert base_model("tiny-reference", TASK_A, seed=4).num_labels == 2


def test_base_model_accepts_any_checkpoint_file_name(tmp_path, tiny_model):
    path = save_checkpoint(tiny_model, tmp_path / "adapted.bin")
    model = base_model(str(path), TASK_A, seed=4)
    assert torch.equal(model.backbone.token_embedding.weight, tiny_model.backbone.token_embedding.weight)
    with pytest.raises(CheckpointError):
        base_model(str(tmp_path / "gone.pt"), TASK_A, seed=4)


def test_cross_validate_structure(train_examples, test_examples):
    dataset = train_examples[:60]
    result = cross_validate(dataset, test_examples, TASK_A, 3, fast_config(epochs=1), "tiny-reference", fold_seed=5)

    assert [o.fold for o in result.outcomes] == [0, 1, 2]
    assert sorted(result.folds.sizes()) == [20, 20, 20]
    for outcome in result.outcomes:
        assert outcome.predictions.ids == [e.id for e in test_examples]
        assert outcome.predictions.model_name == f"tiny-reference-fold{outcome.fold}"
        assert outcome.train_size + outcome.valid_size == 60
    summary = result.summary()
    assert list(summary["fold"]) == [0, 1, 2]
    assert {"best_epoch", "valid_macro_f1", "valid_accuracy"} <= set(summary.columns)

    again = cross_validate(dataset, test_examples, TASK_A, 3, fast_config(epochs=1), "tiny-reference", fold_seed=5)
    assert again.folds.fold_of == result.folds.fold_of
    assert again.prediction_sets[0].labels == result.prediction_sets[0].labels


def test_cross_validated_predict_matches_fold_models(train_examples, test_examples):
    dataset = train_examples[:40]
    config = fast_config(epochs=1)
    assert pipeline.cross_validated_predict is cross_validated_predict
    prediction_sets = cross_validated_predict(dataset, test_examples, TASK_A, 2, config, "tiny-reference")
    reference = cross_validate(dataset, test_examples, TASK_A, 2, config, "tiny-reference")
    assert [p.model_name for p in prediction_sets] == ["tiny-reference-fold0", "tiny-reference-fold1"]
    for ours, theirs in zip(prediction_sets, reference.prediction_sets):
        assert ours.labels == theirs.labels
        np.testing.assert_array_equal(ours.probability_matrix(), theirs.probability_matrix())

    # Fold 0 by hand: train on the other fold, predict the test tweets.
    train, valid = reference.folds.split(dataset, 0)
    model = base_model("tiny-reference", TASK_A, derive_seed(config.seed, "init", 0))
    result = fine_tune(model, train, valid, TASK_A, replace(config, seed=derive_seed(config.seed, "fold", 0)))
    by_hand = predict(result.best_model, test_examples, TASK_A, max_len=config.max_len,
                      batch_size=config.eval_batch_size)
    np.testing.assert_allclose(by_hand.probability_matrix(), prediction_sets[0].probability_matrix(), atol=1e-6)


def test_cross_validate_argument_errors(train_examples, test_examples):
    with pytest.raises(ConfigError):
        cross_validate(train_examples, test_examples, TASK_A, 1, fast_config(), "tiny-reference")
    with pytest.raises(CorpusError):
        cross_validate(train_examples, [], TASK_A, 3, fast_config(), "tiny-reference")


def test_failing_fold_is_reported(tmp_path, train_examples, test_examples):
    with pytest.raises(FoldError) as info:
        cross_validate(train_examples[:30], test_examples, TASK_A, 3, fast_config(epochs=1),
                       str(tmp_path / "missing.pt"))
    assert info.value.fold == 0
    assert isinstance(info.value.cause, CheckpointError)
    assert info.value.exit_code == 2


@pytest.mark.slow
def test_learns_trigger_words(lexicon):
    examples = to_examples(trigger_corpus(2000, seed=31, lexicon=lexicon), TASK_A)
    train, valid = examples[:1800], examples[1800:]
    model = build_encoder("tiny-reference", seed=0)
    config = FineTuneConfig(epochs=6, learning_rate=TINY_FINETUNE_LR, batch_size=4, seed=0)
    result = fine_tune(model, train, valid, TASK_A, config)
    assert result.best_metrics.macro_f1 >= 0.95


@pytest.mark.slow
def test_cv_majority_vote_beats_median_member(lexicon):
    wins = 0
    for seed in range(5):
        dataset = to_examples(trigger_corpus(500, seed=100 + seed, lexicon=lexicon), TASK_A)
        test = to_examples(trigger_corpus(200, seed=200 + seed, lexicon=lexicon, id_offset=1000), TASK_A)
        config = FineTuneConfig(epochs=3, learning_rate=TINY_FINETUNE_LR, batch_size=8, seed=seed)
        result = cross_validate(dataset, test, TASK_A, 10, config, "tiny-reference")

        assert sorted(result.folds.sizes()) == [50] * 10
        assert all(p.ids == [e.id for e in test] for p in result.prediction_sets)
        members = sorted(build_report(test, p, TASK_A).macro_f1 for p in result.prediction_sets)
        median = (members[4] + members[5]) / 2
        if build_report(test, cv_ensemble(result.prediction_sets), TASK_A).macro_f1 >= median:
            wins += 1
    assert wins >= 4
