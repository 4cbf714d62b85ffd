"""Deterministic random substreams.

Every random quantity in the package is drawn from a generator derived from
a master seed and a stable label, so results never depend on evaluation
order or on how many workers were used.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _entropy(seed: int, labels: tuple) -> int:
    key = repr((int(seed),) + tuple(str(lab) for lab in labels)).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:16], "little")


def substream(seed: int, *labels) -> np.random.Generator:
    """Return a generator keyed by ``(seed, *labels)``.

    The same key always yields the same stream; distinct keys yield
    statistically independent streams.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(seed, labels))))


def child_seed(seed: int, *labels) -> int:
    """Integer seed derived from ``(seed, *labels)``, for APIs that take seeds."""
    return _entropy(seed, labels) & 0x7FFFFFFFFFFFFFFF
