import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

from src.config import get_runtime_config
from src.errors import InvalidArgumentError

worker_logger = logging.getLogger('lafs.workers')

T = TypeVar('T')


def resolve_workers(workers: Optional[int] = None, runtime=None) -> int:
    """
    Explicit worker count, else the runtime config's LAFS_WORKERS

    Raises:
        InvalidArgumentError: LAFS_WORKERS is not a positive integer
    """
    if workers is not None:
        return max(1, int(workers))
    raw = (runtime or get_runtime_config()).WORKERS
    try:
        parsed = int(str(raw).strip())
    except ValueError:
        parsed = 0
    if parsed < 1:
        worker_logger.error(f"❌ Invalid LAFS_WORKERS value: {raw!r}")
        raise InvalidArgumentError(f"LAFS_WORKERS must be a positive integer, got {raw!r}")
    return parsed


def map_rows(fn: Callable[[int], T], count: int, workers: Optional[int] = None) -> List[T]:
    """
    Apply ``fn`` to every index in ``range(count)``

    Results come back in index order whatever the worker count, so callers
    that draw only from per-index substreams get sequential-identical output.
    """
    workers = resolve_workers(workers)
    if workers == 1 or count < 2:
        return [fn(i) for i in range(count)]
    worker_logger.debug(f"🧵 Mapping {count} rows over {workers} threads")
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='lafs-worker') as pool:
        return list(pool.map(fn, range(count)))
