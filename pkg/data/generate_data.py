"""
Sample data generator for desk-scale pipeline runs.

Writes an OLID-style training file, an official-layout test set for every
subtask (tweets plus headerless gold labels) and a weakly-labeled corpus with
mentions, URLs and duplicates for the preprocess stage. Labels follow a
trigger-word rule (see pipeline.synthetic), so the tiny reference encoder can
learn them within a few epochs:

  * a tweet is OFF exactly when it contains a trigger word
  * offensive tweets with a target marker are TIN, with the marker's type
    (GRP / IND / OTH), the rest are UNT

Run with: python -m data.generate_data
Output:   data/sample/*  (reproducible via the fixed seed)
"""

import os

from pipeline.synthetic import (
    build_lexicon, trigger_corpus, weak_corpus, write_olid_testset, write_olid_tsv,
    write_weak_corpus,
)

SEED = 42
N_TRAIN = 600
N_TEST = 200
N_WEAK = 2000


def main():
    out_dir = os.path.join(os.path.dirname(__file__), "sample")
    lexicon = build_lexicon()

    train = trigger_corpus(N_TRAIN, SEED, lexicon=lexicon)
    # Test ids continue after the training ids so both files can be mixed safely.
    test = trigger_corpus(N_TEST, SEED + 1, lexicon=lexicon, id_offset=N_TRAIN)

    path = write_olid_tsv(train, os.path.join(out_dir, "olid_train.tsv"))
    print(f"Wrote {len(train)} rows to {path}")
    write_olid_tsv(test, os.path.join(out_dir, "olid_test_labeled.tsv"))

    for task in ("A", "B", "C"):
        tweets = os.path.join(out_dir, f"testset_level{task.lower()}.tsv")
        labels = os.path.join(out_dir, f"labels_level{task.lower()}.csv")
        write_olid_testset(test, tweets, labels, task)
        print(f"Wrote Task {task} test set to {tweets} and {labels}")

    weak = weak_corpus(N_WEAK, SEED + 2, lexicon=lexicon)
    path = write_weak_corpus(weak, os.path.join(out_dir, "weak_corpus.tsv"))
    print(f"Wrote {len(weak)} rows to {path}")


if __name__ == "__main__":
    main()
