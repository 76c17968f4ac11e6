"""Per-epoch batch schedules: row-level (RR) and chunk-level (CR) reshuffling.

Both samplers draw from numpy's PCG64 generator seeded with the epoch seed and
shuffle with ``Generator.permutation`` (a Fisher-Yates shuffle). CR permutes
chunk ids with the same call, so with ``chunk_rows=1`` it produces exactly the
RR permutation for the same seed.

Training rows are assumed to occupy the prefix ``[0, train_rows)`` of the
stored matrices, so a chunk is a contiguous row range.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["Method", "EpochSchedule", "rr_schedule", "cr_schedule", "make_schedule", "epoch_seed"]


class Method(str, enum.Enum):
    RR = "RR"
    CR = "CR"


def epoch_seed(seed: int, epoch: int) -> int:
    return (int(seed) ^ int(epoch)) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class EpochSchedule:
    """Ordered batches for one epoch.

    RR batches hold row ids; CR batches hold chunk ids, which expand to
    contiguous ascending row runs via :meth:`batch_rows`.
    """

    method: Method
    batches: tuple
    epoch_seed: int
    batch_size: int
    train_rows: int
    chunk_rows: int | None = None

    def __len__(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def chunk_range(self, chunk_id: int) -> tuple[int, int]:
        start = int(chunk_id) * self.chunk_rows
        return start, min(start + self.chunk_rows, self.train_rows)

    def batch_rows(self, i: int) -> np.ndarray:
        """Row ids of batch ``i`` in delivery order."""
        entry = self.batches[i]
        if self.method is Method.RR:
            return entry
        return np.concatenate(
            [np.arange(*self.chunk_range(c), dtype=np.int64) for c in entry]
        ) if len(entry) else np.empty(0, dtype=np.int64)

    def batch_sizes(self) -> list[int]:
        if self.method is Method.RR:
            return [len(b) for b in self.batches]
        return [sum(self.chunk_range(c)[1] - self.chunk_range(c)[0] for c in b) for b in self.batches]


def _check_batch_size(batch_size):
    if int(batch_size) < 1:
        raise ConfigError("batch_size must be >= 1")


def rr_schedule(train_rows: int, batch_size: int, seed: int) -> EpochSchedule:
    """Uniform random permutation of the training rows, cut into batches."""
    _check_batch_size(batch_size)
    perm = np.random.default_rng(seed).permutation(int(train_rows)).astype(np.int64)
    batches = tuple(perm[i:i + batch_size] for i in range(0, train_rows, batch_size))
    return EpochSchedule(Method.RR, batches, int(seed), int(batch_size), int(train_rows))


def cr_schedule(train_rows: int, chunk_rows: int, batch_size: int, seed: int) -> EpochSchedule:
    """Permute contiguous row chunks and group consecutive chunks into batches.

    Chunks are taken in permuted order until a batch holds at least
    ``batch_size`` rows. The ragged final chunk, if any, stays in whichever
    batch it lands in, so every row is still visited exactly once.
    """
    _check_batch_size(batch_size)
    if chunk_rows < 1:
        raise ConfigError("chunk_rows must be >= 1")
    if chunk_rows > batch_size:
        raise ConfigError(
            f"chunk must not exceed batch (chunk_rows={chunk_rows}, batch_size={batch_size})"
        )
    num_chunks = -(-int(train_rows) // chunk_rows)
    order = np.random.default_rng(seed).permutation(num_chunks).astype(np.int64)
    last = num_chunks - 1
    last_size = train_rows - last * chunk_rows
    batches, current, filled = [], [], 0
    for c in order:
        current.append(c)
        filled += last_size if c == last else chunk_rows
        if filled >= batch_size:
            batches.append(np.array(current, dtype=np.int64))
            current, filled = [], 0
    if current:
        batches.append(np.array(current, dtype=np.int64))
    return EpochSchedule(
        Method.CR, tuple(batches), int(seed), int(batch_size), int(train_rows), int(chunk_rows)
    )


def make_schedule(method, train_rows, batch_size, seed, chunk_rows=None) -> EpochSchedule:
    method = Method(method)
    if method is Method.RR:
        return rr_schedule(train_rows, batch_size, seed)
    if chunk_rows is None:
        raise ConfigError("CR schedules need chunk_rows")
    return cr_schedule(train_rows, chunk_rows, batch_size, seed)
