"""Process-pool map for embarrassingly parallel layers (replicates, folds)."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "BRIDGEPATH_THREADS"


def default_threads() -> int:
    """Worker count from ``BRIDGEPATH_THREADS``, else the logical CPU count."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def parallel_map(fn, items, threads=1) -> list:
    """``[fn(x) for x in items]``, spread over ``threads`` processes when > 1.

    Results keep input order, so outputs do not depend on ``threads``.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as ex:
        return list(ex.map(fn, items))
