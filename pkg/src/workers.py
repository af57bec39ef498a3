"""
Ordered worker pool for particle- and repetition-level parallelism.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class ParticleWorkers:
    """Maps a function over items, returning results in input order.

    Work items must not share mutable state; every reduction over the
    results happens in the caller, in index order, so results are
    independent of the thread count.
    """

    def __init__(self, threads: int = 1) -> None:
        self.threads = max(1, int(threads))

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


SERIAL = ParticleWorkers(1)
