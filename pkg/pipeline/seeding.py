"""
Seed fan-out.

A single global seed is turned into independent, reproducible stage seeds
(sampling, masking, initialization, shuffling, folds) by mixing in a stage tag.
"""

from typing import Union

import numpy as np
from sklearn.utils import murmurhash3_32

Tag = Union[str, int]


def _tag_entropy(tag: Tag) -> int:
    if isinstance(tag, int):
        return tag & 0xFFFFFFFF
    return murmurhash3_32(str(tag), seed=0, positive=True)


def derive_seed(seed: int, *tags: Tag) -> int:
    """Derive a 32-bit seed from ``seed`` and a sequence of stage tags."""
    entropy = [int(seed) & 0xFFFFFFFF] + [_tag_entropy(t) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def rng_for(seed: int, *tags: Tag) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *tags))
