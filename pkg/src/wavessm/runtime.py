"""Worker-thread control shared by the compute modules.

The ``WAVE_SSM_THREADS`` environment variable caps the number of worker
threads used for independent sub-tasks (0 = auto).  All parallel sections
merge their results in a fixed order, so outputs are bit-identical for any
thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "WAVE_SSM_THREADS"


def num_threads() -> int:
    """Worker-thread cap from WAVE_SSM_THREADS (0 or unset = auto)."""
    raw = os.environ.get(ENV_THREADS, "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_THREADS} must be an integer, got {raw!r}")
    if n < 0:
        raise ValueError(f"{ENV_THREADS} must be >= 0, got {n}")
    if n == 0:
        n = os.cpu_count() or 1
    return n


def thread_map(fn, items):
    """Map ``fn`` over ``items``, possibly on worker threads.

    Results are returned in input order regardless of completion order, so
    any downstream reduction sees a deterministic operand sequence.
    """
    items = list(items)
    workers = min(num_threads(), len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
