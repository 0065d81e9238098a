"""Deterministic named RNG sub-streams.

All randomness in the package flows from a single master seed through
named sub-streams, so any component (a lot, a location, a split) can be
regenerated independently and reruns are bit-identical.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(master_seed: int, *keys) -> int:
    """Hash a master seed plus a sequence of labels into a 128-bit integer.

    Labels may be strings or integers; the digest is independent of
    PYTHONHASHSEED so streams are stable across processes.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(int(master_seed)).encode())
    for k in keys:
        h.update(b"\x1f")
        h.update(repr(k).encode())
    return int.from_bytes(h.digest(), "little")


def substream(master_seed: int, *keys) -> np.random.Generator:
    """Return an independent Generator for the named sub-stream."""
    return np.random.default_rng(stream_key(master_seed, *keys))
