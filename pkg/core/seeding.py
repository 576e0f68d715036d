#!/usr/bin/env python3
"""
Deterministic seed splitting.

Every random stream in the toolkit is derived from one user seed plus the
identity of the task that consumes it, so results do not depend on the order
or the degree of parallelism in which tasks run.
"""

import zlib
from typing import Union

import numpy as np

Key = Union[int, str]


def _key_to_int(key: Key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        # SeedSequence only takes non-negative entropy
        return (1 << 32) + (-key)
    return int(key)


def task_seed(seed: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])


def task_rng(seed: int, *keys: Key) -> np.random.Generator:
    """PCG64 generator for the task identified by ``keys``; portable across platforms."""
    return np.random.Generator(np.random.PCG64(task_seed(seed, *keys)))
