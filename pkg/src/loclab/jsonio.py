"""JSON helpers: lossless float arrays, canonical dumps, atomic writes.

Floats are serialized as C99 hex literals, which round-trip bit-exactly
and stay readable. Canonical dumps (sorted keys, fixed separators) make
reports byte-reproducible across runs.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np


def encode_array(a) -> list:
    arr = np.asarray(a, dtype=float)
    flat = [float(x).hex() for x in arr.ravel()]
    return [list(arr.shape), flat]


def decode_array(payload) -> np.ndarray:
    shape, flat = payload
    arr = np.array([float.fromhex(s) for s in flat], dtype=float)
    return arr.reshape(shape)


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def atomic_write_text(path: str, text: str) -> None:
    """Write via temp file + rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json_atomic(path: str, obj) -> None:
    atomic_write_text(path, canonical_dumps(obj) + "\n")
