"""Deterministic worker-pool helpers.

Results are always assembled in input order and every random draw is keyed by
(seed, item index), so output never depends on the number of workers or on
scheduling.
"""

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads=None):
    """Pick the worker count: explicit value, DCCOX_THREADS, or the CPU count."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("DCCOX_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn, items, threads=None):
    """Map fn over items, in order, optionally on a thread pool."""
    items = list(items)
    nw = resolve_threads(threads)
    if nw <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(fn, items))
