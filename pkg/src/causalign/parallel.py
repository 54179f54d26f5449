"""Optional worker parallelism, capped by MCL_THREADS (default 1).

Only order-preserving maps over pure per-item functions run on the pool, so
results are identical at any thread count; the default of 1 keeps runs
trivially bit-reproducible.
"""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ContractViolation


def worker_count() -> int:
    raw = os.environ.get("MCL_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ContractViolation(f"MCL_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def ordered_map(fn, items) -> list:
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
