"""
Ordered thread-pool mapping for frame- and run-level parallelism
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar, Union

from config.settings import settings

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R],
                items: Iterable[T],
                max_workers: Optional[int] = None,
                capture_errors: bool = False) -> List[Union[R, Exception]]:
    """
    Apply fn to every item concurrently and return results in input order

    Args:
        fn: Function applied to each item
        items: Work items
        max_workers: Worker cap (default from settings)
        capture_errors: Return raised exceptions in place of results instead of re-raising

    Returns:
        List of results, one per item, in the order of items
    """
    work = list(items)
    workers = max(1, min(max_workers or settings.worker_count(), len(work) or 1))

    def _run(item: T) -> Union[R, Exception]:
        if not capture_errors:
            return fn(item)
        try:
            return fn(item)
        except Exception as e:  # noqa: BLE001 - recorded per item
            return e

    if workers == 1:
        return [_run(item) for item in work]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, work))
