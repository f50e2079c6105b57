"""Shared fixtures: synthetic OLID data, tiny models and written input files."""

import pytest
import torch

from pipeline.corpus import LabeledExample
from pipeline.encoder import build_encoder
from pipeline.synthetic import (
    build_lexicon,
    to_examples,
    trigger_corpus,
    weak_corpus,
    write_olid_testset,
    write_olid_tsv,
    write_weak_corpus,
)

# Desk-scale learning rates for the tiny encoder.
TINY_FINETUNE_LR = 5e-4
TINY_MLM_LR = 2e-3

# One thread: faster for tiny matrices.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def lexicon():
    return build_lexicon()


@pytest.fixture(scope="session")
def train_rows(lexicon):
    return trigger_corpus(160, seed=11, lexicon=lexicon)


@pytest.fixture(scope="session")
def test_rows(lexicon):
    return trigger_corpus(40, seed=12, lexicon=lexicon, id_offset=1000)


@pytest.fixture(scope="session")
def train_examples(train_rows):
    return to_examples(train_rows, "A")


@pytest.fixture(scope="session")
def test_examples(test_rows):
    return to_examples(test_rows, "A")


@pytest.fixture
def tiny_model():
    return build_encoder("tiny-reference", seed=0, num_labels=2)


@pytest.fixture
def olid_files(tmp_path, train_rows, test_rows):
    """Labeled train TSV, official-layout Task-A test set and a labeled test TSV."""
    paths = {
        "train": tmp_path / "data" / "olid_train.tsv",
        "test": tmp_path / "data" / "testset_levela.tsv",
        "labels": tmp_path / "data" / "labels_levela.csv",
        "gold": tmp_path / "data" / "olid_test_labeled.tsv",
    }
    write_olid_tsv(train_rows, paths["train"])
    write_olid_testset(test_rows, paths["test"], paths["labels"], "A")
    write_olid_tsv(test_rows, paths["gold"])
    return paths


@pytest.fixture
def weak_file(tmp_path):
    return write_weak_corpus(weak_corpus(100, seed=5, duplicate_rate=0.0), tmp_path / "data" / "weak.tsv")


def make_examples(labels, prefix=""):
    """Examples with ids 1..n and throwaway text."""
    return [LabeledExample(f"{prefix}{i + 1}", f"text {i + 1}", label) for i, label in enumerate(labels)]
