"""Deterministic replica ensembles with optional process parallelism.

Replicas are split into fixed-size chunks, each driven by its own child
seed of one root SeedSequence, so results are identical for any worker
count.  Worker functions must be picklable module-level callables.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

CHUNK = 10_000


def chunk_sizes(total: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def run_replicas(fn: Callable[[np.random.Generator, int], Sequence[np.ndarray]],
                 total: int, seed: int, threads: int = 1,
                 chunk: int = CHUNK) -> list[np.ndarray]:
    """Run ``fn(rng, count)`` over seeded chunks and concatenate its outputs.

    ``fn`` returns a tuple of per-replica arrays of length ``count``; the
    concatenation across chunks preserves replica order.
    """
    sizes = chunk_sizes(total, chunk)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(seeds, sizes))
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_call, [fn] * len(jobs), jobs))
    else:
        parts = [_call(fn, job) for job in jobs]
    return [np.concatenate(cols) for cols in zip(*parts)]


def _call(fn, job):
    seed, count = job
    return fn(np.random.default_rng(seed), count)
