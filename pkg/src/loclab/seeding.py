"""Deterministic seed fan-out.

A master seed is hashed together with string/integer labels into
independent substreams, so adding a new check or path never perturbs
the randomness seen by existing ones. Philox is counter-based: a path's
draws depend only on its own derived key, never on thread or batch
layout.
"""

from __future__ import annotations

import hashlib

import numpy as np


def seed_for(master: int, *labels) -> int:
    """64-bit seed derived from (master, labels) via SHA-256."""
    text = repr((int(master),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.sha256(text).digest()[:8], "little")


def generator(master: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed_for(master, *labels)))


def path_seed(master: int, path_index: int, stream: str = "path") -> int:
    return seed_for(master, stream, path_index)
