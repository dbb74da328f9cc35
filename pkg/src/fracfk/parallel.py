"""Deterministic sharded execution and counter-based random streams.

Every random draw is tied to a (seed, stream, index) triple through a Philox
generator whose key holds (seed, stream) and whose counter starts at the
index. Work is cut into fixed-size shards independent of the worker count and
results are concatenated in shard order, so any reduction over the
concatenated array is bit-identical for every thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional

import numpy as np

# stream tags
PATHS = 0
BRANCH = 1
FIELD = 2
BRANCH_EXTRA = 3
OUTER = 4

DEFAULT_SHARD = 1024
_MASK64 = (1 << 64) - 1


def generator(seed: int, stream: int, index: int) -> np.random.Generator:
    bits = np.random.Philox(key=[int(seed) & _MASK64, int(stream)], counter=[0, 0, 0, int(index)])
    return np.random.Generator(bits)


def normals(seed: int, stream: int, index: int, shape) -> np.ndarray:
    return generator(seed, stream, index).standard_normal(shape)


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        env = os.environ.get("FRACFK_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def shard_ranges(n: int, shard_size: int = DEFAULT_SHARD) -> List[tuple]:
    return [(a, min(a + shard_size, n)) for a in range(0, n, shard_size)]


def map_shards(
    fn: Callable[[int, int], np.ndarray],
    n: int,
    threads: Optional[int] = None,
    shard_size: int = DEFAULT_SHARD,
) -> np.ndarray:
    """Apply fn(start, stop) to every shard of range(n) and concatenate in order."""
    ranges = shard_ranges(n, shard_size)
    workers = resolve_threads(threads)
    if workers == 1 or len(ranges) == 1:
        parts = [fn(a, b) for a, b in ranges]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda r: fn(*r), ranges))
    return np.concatenate(parts, axis=0)
