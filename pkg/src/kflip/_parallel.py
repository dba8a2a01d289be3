import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "KFLIP_THREADS"


def resolve_threads(threads=None) -> int:
    if threads is None:
        threads = os.environ.get(ENV_THREADS, 1)
    threads = int(threads)
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def ordered_map(fn, items, threads=1):
    """``list(map(fn, items))`` on a thread pool; output order follows ``items``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
