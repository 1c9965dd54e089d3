"""Process-pool map with deterministic, order-preserving collection.

Work items carry their own seeds, so the result is identical for any worker
count; heavy per-task cost skew is absorbed by small chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["parallel_map", "default_workers"]


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def parallel_map(fn, tasks, workers: int = 1):
    """Map fn over tasks, in order; serial when workers <= 1."""
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 8))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))
