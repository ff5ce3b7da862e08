"""Memoized index families ``n ↦ object`` shared by functional and measure sequences."""

from __future__ import annotations

import threading
from typing import Callable, Generic, TypeVar

T = TypeVar("T")

DEFAULT_RANGE = (1, 10**12)


class IndexedFamily(Generic[T]):
    """Lazily evaluated family with a declared index range.

    Each index is evaluated at most once; the cache is guarded by a lock so
    concurrent estimators may share one family.
    """

    def __init__(self, evaluator: Callable[[int], T], n_range: tuple[int, int] = DEFAULT_RANGE, name: str = ""):
        lo, hi = int(n_range[0]), int(n_range[1])
        if lo < 1 or hi < lo:
            raise ValueError(f"invalid index range {n_range}")
        self._evaluator = evaluator
        self.n_range = (lo, hi)
        self.name = name
        self._cache: dict[int, T] = {}
        self._lock = threading.Lock()

    def _validate(self, n: int, value: T) -> None:
        """Hook for subclasses; raise on an invalid member."""

    def __call__(self, n: int) -> T:
        n = int(n)
        if not self.n_range[0] <= n <= self.n_range[1]:
            raise ValueError(f"n={n} outside the declared range {self.n_range}")
        with self._lock:
            if n in self._cache:
                return self._cache[n]
        value = self._evaluator(n)
        self._validate(n, value)
        with self._lock:
            return self._cache.setdefault(n, value)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()
