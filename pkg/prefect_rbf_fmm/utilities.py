"""Utilities shared by the summation and experiment modules."""

from functools import partial
from typing import Callable, Iterable, List, TypeVar

import anyio
import numpy as np
from anyio import CapacityLimiter, to_thread
from prefect.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")


def generator(seed: int) -> np.random.Generator:
    """
    Returns a random generator over the counter-based Philox bit generator.

    Every random draw in the collection flows from one of these, so results
    depend on the seed only.

    Args:
        seed: Nonnegative integer seed.

    Returns:
        A fresh numpy Generator.
    """
    if seed < 0:
        raise ValueError(f"Seed must be nonnegative, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


async def _map_in_threads(fn: Callable[[T], None], blocks: list, threads: int):
    limiter = CapacityLimiter(threads)
    async with anyio.create_task_group() as task_group:
        for block in blocks:
            task_group.start_soon(
                partial(to_thread.run_sync, partial(fn, block), limiter=limiter)
            )


def map_blocks(fn: Callable[[T], None], blocks: Iterable[T], threads: int = 1):
    """
    Calls `fn` on every block, in worker threads when `threads > 1`.

    Each call must write a disjoint slice of its output; the result is then
    independent of scheduling, and bitwise identical for a fixed thread count.

    Args:
        fn: Function of one block; its return value is ignored.
        blocks: Work items, e.g. ranges of target boxes.
        threads: Upper bound on concurrently running calls.
    """
    blocks = list(blocks)
    if threads <= 1 or len(blocks) <= 1:
        for block in blocks:
            fn(block)
        return
    try:
        anyio.run(_map_in_threads, fn, blocks, threads)
    except RuntimeError as exc:
        if "running" not in str(exc):
            raise
        logger.debug(
            "Event loop already running, mapping %s blocks serially", len(blocks)
        )
        for block in blocks:
            fn(block)


def row_slices(n: int, size: int) -> List[slice]:
    """
    Splits `range(n)` into contiguous slices of at most `size` rows.
    """
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


def box_blocks(boxes: np.ndarray, threads: int) -> List[np.ndarray]:
    """
    Splits an array of box indices into work items for `map_blocks`.
    """
    parts = max(1, min(len(boxes), 4 * threads))
    return [block for block in np.array_split(boxes, parts) if len(block)]


def fit_loglog_slope(x, y) -> float:
    """
    Least-squares slope of log(y) against log(x).
    """
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("A log-log fit needs at least two positive samples")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)
