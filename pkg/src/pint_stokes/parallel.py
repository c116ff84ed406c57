"""Shared-memory block-parallel execution harness.

The solvers never start workers themselves; they accept a ``block_map``
callable ``(func, items) -> list`` and the driver hands them one built here.
Work is split into contiguous chunks, one per worker, and every block is
computed by exactly the same arithmetic regardless of the worker count, so
results are bitwise reproducible.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

from .errors import BlockSolveError, ConfigurationError

__all__ = ["block_parallel_map", "chunk_sizes", "BlockPool", "available_workers",
           "WORKERS_ENV"]

WORKERS_ENV = "PINT_WORKERS"


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def chunk_sizes(n_items: int, workers: int, first_reduced: bool = False) -> list[int]:
    """Contiguous chunk lengths for ``workers`` workers.

    With ``first_reduced`` the first worker receives one item fewer than the
    others (weak-scaling layout); otherwise the split is as even as possible.
    """
    if workers < 1:
        raise ConfigurationError(f"worker count must be >= 1, got {workers}")
    if n_items == 0:
        return []
    workers = min(workers, n_items)
    if first_reduced and workers > 1:
        a = (n_items + 1) // workers
        sizes = [max(a - 1, 0)] + [a] * (workers - 1)
        sizes[-1] += n_items - sum(sizes)
        if sizes[-1] < 0:
            return chunk_sizes(n_items, workers)
        return [s for s in sizes if s > 0]
    base, extra = divmod(n_items, workers)
    return [base + (1 if w < extra else 0) for w in range(workers)]


def _run_chunk(func, chunk):
    out = []
    for item in chunk:
        try:
            out.append(func(item))
        except BlockSolveError:
            raise
        except Exception as exc:  # noqa: BLE001 - rewrapped with the block index
            raise BlockSolveError(item, exc) from exc
    return out


def _split(items, sizes):
    chunks, start = [], 0
    for s in sizes:
        chunks.append(items[start:start + s])
        start += s
    return chunks


def block_parallel_map(func: Callable, items: Sequence, worker_count: int = 1,
                       first_reduced: bool = False,
                       executor: Optional[ThreadPoolExecutor] = None) -> list:
    """Evaluate ``func`` on every item, preserving order.

    A failure inside ``func`` is re-raised as :class:`BlockSolveError` naming
    the failing item (the block index for the solvers in this package).
    """
    items = list(items)
    sizes = chunk_sizes(len(items), worker_count, first_reduced)
    if len(sizes) <= 1:
        return _run_chunk(func, items)
    chunks = _split(items, sizes)
    own = executor is None
    pool = executor or ThreadPoolExecutor(max_workers=len(chunks))
    try:
        futures = [pool.submit(_run_chunk, func, c) for c in chunks]
        results = []
        for fut in futures:  # in chunk order, so output order is deterministic
            results.extend(fut.result())
        return results
    finally:
        if own:
            pool.shutdown(wait=True)


class BlockPool:
    """Persistent thread pool exposing the ``block_map`` interface.

    Use as a context manager so the threads are released after the solve.
    """

    def __init__(self, workers: int = 1, first_reduced: bool = False):
        if workers < 1:
            raise ConfigurationError(f"worker count must be >= 1, got {workers}")
        self.workers = workers
        self.first_reduced = first_reduced
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def __call__(self, func, items):
        return block_parallel_map(func, items, self.workers, self.first_reduced, self._pool)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
