"""Index-ordered parallel map shared by the bootstrap and Monte Carlo loops."""

from __future__ import annotations

import os

from joblib import Parallel, delayed


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``SIEVEI_THREADS``, else 1."""
    if threads is None:
        threads = int(os.environ.get("SIEVEI_THREADS", "1"))
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def parallel_map(fn, items, threads: int | None = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved.

    Results never depend on the worker count because every task derives its
    random stream from its own index.
    """
    threads = resolve_threads(threads)
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(x) for x in items)
