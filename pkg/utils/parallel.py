"""
Thread-pool helper honouring RECURNET_THREADS.

numpy and scipy release the GIL in their kernels, so column solves and batched
path steps overlap on threads.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

from core.config import get_global_config

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def worker_count(max_workers: Optional[int] = None) -> int:
    """Effective worker count: explicit argument, else the configured cap"""
    if max_workers is not None:
        return max(1, int(max_workers))
    return get_global_config().threads.max_workers


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    max_workers: Optional[int] = None,
    label: str = 'task',
) -> List[R]:
    """
    Apply ``fn`` to every item on a thread pool, returning results in input order.

    Runs inline when one worker is configured or there is a single item. The
    first exception raised by any task is re-raised after logging.

    Args:
        fn: Function applied to each item
        items: Inputs
        max_workers: Worker cap (defaults to RECURNET_THREADS)
        label: Name used in progress log lines

    Returns:
        List of results aligned with ``items``
    """
    workers = worker_count(max_workers)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: List[Optional[R]] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        future_to_index = {executor.submit(fn, item): i for i, item in enumerate(items)}

        completed = 0
        total = len(items)
        for future in as_completed(future_to_index):
            index = future_to_index[future]
            try:
                results[index] = future.result()
            except Exception as e:
                logger.warning(f"{label} {index} failed: {e}")
                raise
            completed += 1
            if completed % 50 == 0:
                logger.debug(f"{label} progress: {completed}/{total}")

    return results  # type: ignore[return-value]
