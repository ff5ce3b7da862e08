"""Order-preserving parallel map used by the estimators."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

_default_threads = 1


def set_default_threads(threads: int) -> None:
    global _default_threads
    if threads < 1:
        raise ValueError("threads must be >= 1")
    _default_threads = int(threads)


def default_threads() -> int:
    return _default_threads


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    """Map ``fn`` over ``items``; results come back in input order regardless of threads."""
    items = list(items)
    threads = _default_threads if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
