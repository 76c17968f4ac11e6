"""Instrumented byte counter standing in for a device memory meter.

Components that materialise fast-tier buffers (assembled batches, model
activation tapes) report them with :func:`alloc` / :func:`free`. Counting is
a no-op unless a :class:`MemoryTracker` is active.
"""
from __future__ import annotations

import contextlib
import threading

__all__ = ["MemoryTracker", "tracking", "alloc", "free", "active"]


class MemoryTracker:
    def __init__(self):
        self._lock = threading.Lock()
        self.live = 0
        self.peak = 0

    def alloc(self, nbytes: int) -> None:
        with self._lock:
            self.live += int(nbytes)
            if self.live > self.peak:
                self.peak = self.live

    def free(self, nbytes: int) -> None:
        with self._lock:
            self.live -= int(nbytes)


_active: MemoryTracker | None = None


def active() -> MemoryTracker | None:
    return _active


@contextlib.contextmanager
def tracking():
    """Activate a fresh tracker for the duration of the block."""
    global _active
    prev, tracker = _active, MemoryTracker()
    _active = tracker
    try:
        yield tracker
    finally:
        _active = prev


def alloc(nbytes: int) -> None:
    t = _active
    if t is not None:
        t.alloc(nbytes)


def free(nbytes: int) -> None:
    t = _active
    if t is not None:
        t.free(nbytes)
