"""Seed derivation and schedule-independent parallel mapping.

Every random draw in the package comes from a Philox stream keyed by
``(seed, *key)``.  Units are split into fixed-size blocks and each block owns
its own stream, so results never depend on how many workers ran the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np

BLOCK_SIZE = 1 << 16
THREADS_ENV = "DECISION_DID_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def generator(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Derive an independent 64-bit child seed from ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    hi, lo = ss.generate_state(2, np.uint32)
    return (int(hi) << 32) | int(lo)


def blocks(n: int) -> Iterator[tuple[int, int, int]]:
    for b, start in enumerate(range(0, n, BLOCK_SIZE)):
        yield b, start, min(start + BLOCK_SIZE, n)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int | None = None) -> list[R]:
    items = list(items)
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
