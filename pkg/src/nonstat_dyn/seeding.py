"""Deterministic RNG substreams derived from a single root seed."""
from __future__ import annotations

import hashlib

import numpy as np


def _words(name) -> tuple[int, int]:
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:8], "little"),
    )


def substream(root_seed: int, *path) -> np.random.Generator:
    """Named, reproducible child generator of `root_seed`.

    Two calls with the same root seed and path yield identical streams;
    distinct paths yield statistically independent streams.
    """
    key: list[int] = []
    for name in path:
        key.extend(_words(name))
    seq = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(key))
    return np.random.default_rng(seq)
