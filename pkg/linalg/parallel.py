import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

THREADS_ENV = "RCA54_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        logger.warning(f"Ignoring {THREADS_ENV}={raw!r}; using 1 worker")
        return 1
    return max(1, n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 0) -> List[R]:
    """Ordered map over independent jobs; serial when a single worker is configured."""
    workers = workers or worker_count()
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
