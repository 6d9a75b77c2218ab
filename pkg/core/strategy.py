# core/strategy.py → Execution Strategy
# Role: Decides how independent work items run: serially or on a bounded thread pool.

# Results always come back in input order, so reductions over them are identical
# whatever the thread count.

# core/strategy.py

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar
import os

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: int) -> int:
    if threads is None or threads <= 0:
        return max(1, os.cpu_count() or 1)
    return int(threads)


def chunk_ranges(n: int, chunks: int) -> List[range]:
    """Split range(n) into at most `chunks` contiguous, non-empty ranges."""
    chunks = max(1, min(chunks, n))
    if n == 0:
        return []
    bounds = [round(i * n / chunks) for i in range(chunks + 1)]
    return [range(bounds[i], bounds[i + 1]) for i in range(chunks) if bounds[i] < bounds[i + 1]]


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    workers = resolve_threads(threads)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
