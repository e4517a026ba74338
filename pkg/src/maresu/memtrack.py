"""Allocation-tracking hook for the attention kernels.

Kernels call :func:`note` on every temporary they allocate. Outside a
:func:`track_allocations` block this is a no-op, so production calls pay
only a thread-local lookup. Inside one, each temporary is logged with its
size in floats and whether it is a per-row buffer (``n`` rows, feature
width) or an auxiliary buffer whose size should not depend on ``n``.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

_local = threading.local()


@dataclass
class Allocation:
    label: str
    shape: tuple[int, ...]
    per_row: bool

    @property
    def floats(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class AllocationLog:
    records: list[Allocation] = field(default_factory=list)

    @property
    def largest(self) -> int:
        """Size in floats of the largest temporary seen (0 if none)."""
        return max((r.floats for r in self.records), default=0)

    @property
    def aux_floats(self) -> int:
        """Total floats held in auxiliary (non per-row) temporaries."""
        return sum(r.floats for r in self.records if not r.per_row)

    def labels(self) -> list[str]:
        return [r.label for r in self.records]


def _stack() -> list[AllocationLog]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def note(label: str, arr: np.ndarray, per_row: bool = False) -> np.ndarray:
    """Record ``arr`` in every active log on this thread and return it."""
    stack = _stack()
    if stack:
        rec = Allocation(label, tuple(arr.shape), per_row)
        for log in stack:
            log.records.append(rec)
    return arr


@contextmanager
def track_allocations():
    """Collect kernel temporaries allocated on this thread.

    >>> with track_allocations() as log:
    ...     pass
    >>> log.largest
    0
    """
    log = AllocationLog()
    stack = _stack()
    stack.append(log)
    try:
        yield log
    finally:
        stack.remove(log)
