"""Ordered thread-pool map used by the pairwise and per-measure loops."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .core import ValidationError

ENV_THREADS = "MEASURE_EMBED_THREADS"


def resolve_threads(threads=None) -> int:
    """Resolve a worker count: explicit value, else the MEASURE_EMBED_THREADS
    environment variable, else 1."""
    if threads is None:
        env = os.environ.get(ENV_THREADS, "").strip()
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValidationError(f"{ENV_THREADS} must be an integer, got {env!r}") from None
        else:
            threads = 1
    threads = int(threads)
    if threads < 1:
        raise ValidationError("thread count must be >= 1")
    return threads


def ordered_map(fn, items, threads: int = 1) -> list:
    """Apply fn to each item, returning results in input order.

    Each task must be a pure function of its item so that results do not
    depend on the schedule; with threads=1 this is a plain loop.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
