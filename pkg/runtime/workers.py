"""
Thread-pool helpers and per-unit seed derivation.

Results come back in input order and every unit draws from its own
SeedSequence child, so outputs do not depend on the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = 1) -> List[R]:
    """
    Ordered map over items, inline when threads <= 1.

    Args:
        fn: Function applied to each item
        items: Work units
        threads: Worker cap (None = available parallelism)

    Returns:
        [fn(item) for item in items]
    """
    items = list(items)
    if threads is None:
        threads = default_threads()
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def spawn_seeds(seed: int, n: int) -> List[int]:
    """Derive n independent integer seeds from a master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def spawn_rngs(seed: int, n: int) -> List[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(n)]
