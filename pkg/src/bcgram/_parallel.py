from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def resolve_threads(threads) -> int:
    if threads in (None, "auto", 0):
        return os.cpu_count() or 1
    return max(1, int(threads))


def pmap(fn, items, threads=1) -> list:
    """Ordered map; results never depend on the thread count."""
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
