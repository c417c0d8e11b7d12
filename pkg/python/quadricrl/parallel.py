"""Chunked parallel execution with order-stable results

Work is split into blocks whose boundaries depend only on the input size and
the chunk size, never on the worker count, and results are reduced with a
fixed-shape pairwise tree. Any worker count therefore produces the same
floating-point result.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def chunk_bounds(total: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Half-open [start, stop) ranges covering 0..total"""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be positive, got {chunk_size}")
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def resolve_workers(workers: Optional[int]) -> int:
    return max(1, workers or os.cpu_count() or 1)


def chunked_map(
    func: Callable[[T], R],
    items: Sequence[T],
    workers: int = 1,
) -> List[R]:
    """Apply ``func`` to every item, returning results in input order

    numpy and scipy release the GIL inside their kernels, so a thread pool
    keeps the blocks busy without pickling systems.
    """
    workers = resolve_workers(workers)
    if workers == 1 or len(items) <= 1:
        return [func(item) for item in items]

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(func, item) for item in items]
        results = [future.result() for future in futures]
    logger.debug("chunked_map ran %d blocks on %d workers", len(items), workers)
    return results


def pairwise_sum(values: Sequence[np.ndarray], combine: Callable = np.add) -> np.ndarray:
    """Reduce a sequence with a balanced binary tree of fixed shape

    The tree depends only on ``len(values)``; pass ``np.logaddexp`` to reduce
    log-space partial sums.
    """
    if len(values) == 0:
        raise ValueError("pairwise_sum needs at least one value")
    level = list(values)
    while len(level) > 1:
        merged = [combine(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return np.asarray(level[0])


__all__ = ["chunk_bounds", "resolve_workers", "chunked_map", "pairwise_sum"]
