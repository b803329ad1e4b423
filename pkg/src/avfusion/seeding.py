"""Labeled seed derivation.

Every random stream in the package is derived from a root seed plus a tuple
of labels, so that results do not depend on call order or on whether work is
split across threads.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_word(label) -> int:
    digest = hashlib.blake2b(repr(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(seed: int, *labels) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(_label_word(x) for x in labels)])


def derive_rng(seed: int, *labels) -> np.random.Generator:
    """Return a generator that depends only on ``seed`` and ``labels``."""
    return np.random.default_rng(derive_seed(seed, *labels))
