"""One seeded stream per run, forked by stable labels.

A draw keyed by labels does not depend on how many other draws happened
before it, so two architecture variants on the same seed see identical tool
outcomes and repair draws (common random numbers).
"""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(*labels) -> tuple[int, ...]:
    h = hashlib.blake2b("\x1f".join(map(str, labels)).encode(), digest_size=16).digest()
    return tuple(int.from_bytes(h[i:i + 4], "little") for i in range(0, 16, 4))


class RunRandom:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def fork(self, *labels) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=label_key(*labels)))

    def uniform(self, *labels) -> float:
        return float(self.fork(*labels).random())

    def choice(self, options, *labels):
        options = list(options)
        return options[int(self.fork(*labels).integers(len(options)))]


def derive_seed(seed: int, index: int) -> int:
    """Seed of repetition ``index`` of an experiment."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
