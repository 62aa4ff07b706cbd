"""Ordered thread-pool map capped by ``MIXSHIFT_THREADS``."""

import os
from concurrent.futures import ThreadPoolExecutor


def thread_cap():
    raw = os.environ.get("MIXSHIFT_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def ordered_map(fn, items):
    """``list(map(fn, items))``, run on threads when more than one is allowed.
    Results are always returned in input order."""
    items = list(items)
    workers = min(thread_cap(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
