"""Ordered worker-pool helpers shared by ensembles, scans and sweeps."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, Sequence, TypeVar

import numpy as np

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(func: Callable[[T], R], items: Iterable[T],
                workers: Optional[int] = None) -> List[R]:
    """Apply ``func`` to every item and return results in submission order.

    ``workers`` of ``None`` or 1 runs inline; results never depend on the
    worker count.
    """
    items = list(items)
    if not workers or workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))


def spawn_generators(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generators, one per frame, derived from a root seed."""
    children: Sequence[np.random.SeedSequence] = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]
