"""Deterministic labelled random streams.

A single master seed plus a textual label ("replicate/17/generate", ...)
identifies every random stream in the package. Labels are hashed with
BLAKE2 (stable across platforms and processes, unlike Python's salted
``hash``), so adding a new stream never perturbs existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _label_words(parts: tuple) -> list[int]:
    label = "/".join(str(p) for p in parts)
    digest = hashlib.blake2b(label.encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


def child_seed(master: int, *parts) -> int:
    """A 64-bit seed deterministically derived from ``master`` and a label."""
    words = _label_words(parts)
    h = master & _MASK64
    for w in words:
        h ^= w
        h = (h * 0x100000001B3) & _MASK64
    return h


def substream(master: int, *parts) -> np.random.Generator:
    """An independent ``numpy`` generator for the labelled purpose.

    Streams for distinct labels are statistically independent; the same
    (master, label) pair always yields the identical stream.
    """
    entropy = [master & _MASK64] + _label_words(parts)
    return np.random.default_rng(np.random.SeedSequence(entropy))
