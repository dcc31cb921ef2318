"""Deterministic random substreams and a worker pool.

Each task gets its own Philox generator keyed by
``SeedSequence(seed, spawn_key=(purpose, index))``. Philox is counter-based,
so a stream depends only on (seed, purpose, index): adding replicas or
changing the worker count never perturbs existing streams.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

logger = logging.getLogger(__name__)

__all__ = ["SCHEME", "substream", "substreams", "resolve_threads", "chunk_ranges", "parallel_chunks"]

SCHEME = "numpy SeedSequence(seed, spawn_key=(purpose, index)) -> Philox4x64-10"

# Stable purpose codes; append only.
PURPOSES = {
    "replica": 0,
    "init": 1,
    "draw": 2,
    "pair": 3,
    "trial": 4,
}


def substream(seed: int, purpose: str, index: int) -> np.random.Generator:
    key = (PURPOSES[purpose], int(index))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def substreams(seed: int, purpose: str, n: int, start: int = 0) -> list[np.random.Generator]:
    return [substream(seed, purpose, i) for i in range(start, start + n)]


def resolve_threads(threads=None) -> int:
    """``threads`` argument, else ``UTURNLAB_THREADS``, else 1; ``"auto"`` means all cores."""
    if threads is None:
        threads = os.environ.get("UTURNLAB_THREADS", 1)
    if isinstance(threads, str):
        if threads.strip().lower() == "auto":
            return max(1, os.cpu_count() or 1)
        threads = int(threads)
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return int(threads)


def chunk_ranges(n: int, n_chunks: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``n_chunks`` contiguous ``(lo, hi)`` pieces."""
    n_chunks = max(1, min(n_chunks, n)) if n > 0 else 1
    edges = np.linspace(0, n, n_chunks + 1).round().astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def parallel_chunks(fn, n: int, threads: int = 1):
    """Run ``fn(lo, hi)`` over contiguous chunks of ``range(n)``; results in chunk order.

    Chunking only changes which worker runs which tasks; per-task streams
    make results independent of ``threads``.
    """
    ranges = chunk_ranges(n, threads)
    if threads <= 1 or len(ranges) <= 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))
