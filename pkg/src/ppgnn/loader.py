"""Batch assembly from a data tier and the double-buffered prefetch pipeline.

Three tiers model where hop features live during training:

``resident``
    Hop matrices sit in fast memory; a batch is one gather per hop.
``staged``
    Hop matrices sit in bulk memory. Rows are gathered into a fixed staging
    buffer on the producer side and then copied ("transferred") into the
    batch. CR batches transfer chunk by chunk instead.
``storage``
    Hop data is read chunk-wise from PPGF files, one read per hop file per
    chunk, issued concurrently. Only CR schedules are accepted.
"""
from __future__ import annotations

import enum
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import memtrack
from .errors import ConfigError, DataError
from .sampler import EpochSchedule, Method

__all__ = [
    "TierKind",
    "Tier",
    "HopData",
    "Batch",
    "TransferStats",
    "BatchAssembler",
    "assemble_batch_rows",
    "assemble_batch_chunks",
    "serial_loader",
    "prefetch_loader",
    "PrefetchLoader",
]


class TierKind(str, enum.Enum):
    RESIDENT = "resident"
    STAGED = "staged"
    STORAGE = "storage"

    @classmethod
    def parse(cls, value):
        return cls(value.lower()) if isinstance(value, str) else cls(value)


@dataclass(frozen=True)
class Tier:
    kind: TierKind = TierKind.RESIDENT
    inject_assemble_us: float = 0.0
    inject_transfer_us: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TierKind.parse(self.kind))
        if self.inject_assemble_us < 0 or self.inject_transfer_us < 0:
            raise ConfigError("injected latencies must be non-negative")

    def check_method(self, method) -> None:
        if self.kind is TierKind.STORAGE and Method(method) is not Method.CR:
            raise ConfigError("storage tier only supports chunk reshuffling (method=CR)")


@dataclass
class HopData:
    """Training-side view of the hop features.

    ``hops`` holds in-memory matrices (resident/staged tiers); ``stores`` holds
    open chunk stores (storage tier). Either may be absent when the tier in use
    does not need it. Row ``i`` of every source is the same node.
    """

    labels: np.ndarray
    hops: list | None = None
    stores: list | None = None

    def __post_init__(self):
        if self.hops is None and self.stores is None:
            raise ValueError("HopData needs in-memory hops or chunk stores")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.hops is not None:
            self.hops = [np.ascontiguousarray(h, dtype=np.float32) for h in self.hops]
            shapes = {h.shape for h in self.hops}
            if len(shapes) != 1:
                raise ValueError(f"hop matrices disagree in shape: {sorted(shapes)}")
        if self.stores is not None:
            meta = {(s.num_rows, s.feature_dim) for s in self.stores}
            if len(meta) != 1:
                raise DataError(f"hop stores disagree on rows/feature_dim: {sorted(meta)}")

    @property
    def num_hop_mats(self) -> int:
        return len(self.hops) if self.hops is not None else len(self.stores)

    @property
    def feature_dim(self) -> int:
        return self.hops[0].shape[1] if self.hops is not None else self.stores[0].feature_dim

    @property
    def num_rows(self) -> int:
        return self.hops[0].shape[0] if self.hops is not None else self.stores[0].num_rows


@dataclass
class Batch:
    hops: tuple
    labels: np.ndarray
    rows: np.ndarray
    ordinal: int
    assemble_s: float = 0.0
    transfer_s: float = 0.0

    @property
    def size(self) -> int:
        return int(self.rows.size)

    @property
    def nbytes(self) -> int:
        return sum(h.nbytes for h in self.hops)


@dataclass
class TransferStats:
    bytes_assembled: int = 0
    bytes_transferred: int = 0
    batches_produced: int = 0

    def reset(self) -> None:
        self.bytes_assembled = self.bytes_transferred = self.batches_produced = 0


def _sleep_us(us):
    if us > 0:
        time.sleep(us / 1e6)


class BatchAssembler:
    """Builds batches for one (tier, data) pair and keeps transfer counters.

    Not thread-safe: one producer owns an assembler at a time.
    """

    def __init__(self, tier: Tier, data: HopData, stats: TransferStats | None = None):
        self.tier = tier if isinstance(tier, Tier) else Tier(tier)
        self.data = data
        self.stats = stats if stats is not None else TransferStats()
        kind = self.tier.kind
        if kind is TierKind.STORAGE and data.stores is None:
            raise ConfigError("storage tier requires chunk stores")
        if kind is not TierKind.STORAGE and data.hops is None:
            raise ConfigError(f"{kind.value} tier requires in-memory hop matrices")
        self._staging = None
        self._pool = None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _staging_buffers(self, rows):
        f = self.data.feature_dim
        if self._staging is None or self._staging[0].shape[0] < rows:
            self._staging = [np.empty((rows, f), dtype=np.float32) for _ in range(self.data.num_hop_mats)]
        return [buf[:rows] for buf in self._staging]

    def rows(self, row_ids, ordinal: int = 0) -> Batch:
        kind = self.tier.kind
        if kind is TierKind.STORAGE:
            raise ConfigError("storage tier only supports chunk reshuffling (method=CR)")
        row_ids = np.asarray(row_ids, dtype=np.int64)
        n = self.data.num_rows
        if row_ids.size and (row_ids.min() < 0 or row_ids.max() >= n):
            raise IndexError(f"row id out of range [0, {n})")
        b = row_ids.size
        nbytes = b * self.data.feature_dim * 4 * self.data.num_hop_mats

        t0 = time.perf_counter()
        if kind is TierKind.RESIDENT:
            hops = tuple(np.take(h, row_ids, axis=0) for h in self.data.hops)
        else:
            staging = self._staging_buffers(b)
            for h, buf in zip(self.data.hops, staging):
                np.take(h, row_ids, axis=0, out=buf)
        _sleep_us(self.tier.inject_assemble_us)
        t1 = time.perf_counter()
        if kind is TierKind.STAGED:
            hops = tuple(buf.copy() for buf in staging)
            _sleep_us(self.tier.inject_transfer_us)
            self.stats.bytes_transferred += nbytes
        t2 = time.perf_counter()

        self.stats.bytes_assembled += nbytes
        self.stats.batches_produced += 1
        return Batch(hops, self.data.labels[row_ids], row_ids, ordinal, t1 - t0, t2 - t1)

    def _read_chunk_all_hops(self, start, stop, chunk_id):
        def read(hop):
            try:
                return self.data.stores[hop].read_rows(start, stop)
            except Exception as exc:
                raise DataError(f"read failed for hop {hop}, chunk {chunk_id}: {exc}") from exc

        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.data.num_hop_mats,
                                            thread_name_prefix="ppgf-read")
        return list(self._pool.map(read, range(self.data.num_hop_mats)))

    def chunks(self, schedule: EpochSchedule, chunk_ids, ordinal: int = 0) -> Batch:
        kind = self.tier.kind
        ranges = [schedule.chunk_range(c) for c in chunk_ids]
        row_ids = np.concatenate(
            [np.arange(s, e, dtype=np.int64) for s, e in ranges]
        ) if ranges else np.empty(0, dtype=np.int64)
        b = row_ids.size
        f, nh = self.data.feature_dim, self.data.num_hop_mats
        if b and row_ids.max() >= self.data.num_rows:
            raise IndexError(f"chunk rows exceed the {self.data.num_rows} stored rows")
        nbytes = b * f * 4 * nh

        t0 = time.perf_counter()
        t_xfer = 0.0
        if kind is TierKind.RESIDENT:
            hops = tuple(np.concatenate([h[s:e] for s, e in ranges]) if ranges
                         else np.empty((0, f), np.float32) for h in self.data.hops)
        else:
            out = [np.empty((b, f), dtype=np.float32) for _ in range(nh)]
            pos = 0
            for c, (s, e) in zip(chunk_ids, ranges):
                tx = time.perf_counter()
                if kind is TierKind.STAGED:
                    parts = [h[s:e] for h in self.data.hops]
                else:
                    parts = self._read_chunk_all_hops(s, e, int(c))
                for dst, src in zip(out, parts):
                    dst[pos:pos + e - s] = src
                pos += e - s
                t_xfer += time.perf_counter() - tx
            hops = tuple(out)
            self.stats.bytes_transferred += nbytes
        _sleep_us(self.tier.inject_assemble_us)
        if kind is not TierKind.RESIDENT:
            tx = time.perf_counter()
            _sleep_us(self.tier.inject_transfer_us)
            t_xfer += time.perf_counter() - tx
        total = time.perf_counter() - t0

        self.stats.bytes_assembled += nbytes
        self.stats.batches_produced += 1
        return Batch(hops, self.data.labels[row_ids], row_ids, ordinal, total - t_xfer, t_xfer)

    def batch(self, schedule: EpochSchedule, i: int) -> Batch:
        entry = schedule.batches[i]
        if schedule.method is Method.CR:
            return self.chunks(schedule, entry, ordinal=i)
        return self.rows(entry, ordinal=i)


def assemble_batch_rows(tier, hop_data: HopData, row_ids, stats: TransferStats | None = None,
                        ordinal: int = 0) -> Batch:
    """Gather ``row_ids`` from every hop matrix in a single pass per hop."""
    with BatchAssembler(tier, hop_data, stats) as asm:
        return asm.rows(row_ids, ordinal)


def assemble_batch_chunks(tier, hop_data: HopData, schedule: EpochSchedule, chunk_ids,
                          stats: TransferStats | None = None, ordinal: int = 0) -> Batch:
    """Copy whole chunks, in schedule order, into one contiguous batch."""
    with BatchAssembler(tier, hop_data, stats) as asm:
        return asm.chunks(schedule, chunk_ids, ordinal)


def _prepare(schedule, tier, data, stats):
    tier = tier if isinstance(tier, Tier) else Tier(tier)
    tier.check_method(schedule.method)
    return BatchAssembler(tier, data, stats)


def serial_loader(schedule: EpochSchedule, tier, data: HopData, stats: TransferStats | None = None):
    """Yield batches in schedule order, assembling each only when requested."""
    asm = _prepare(schedule, tier, data, stats)
    held = 0
    try:
        for i in range(len(schedule)):
            batch = asm.batch(schedule, i)
            memtrack.free(held)
            held = batch.nbytes
            memtrack.alloc(held)
            yield batch
    finally:
        memtrack.free(held)
        asm.close()


_DONE = object()


class PrefetchLoader:
    """Two-slot producer/consumer pipeline.

    A producer thread assembles batch ``i+1`` while the consumer works on
    batch ``i``. A slot is released only when the consumer asks for the next
    batch (or closes the loader), so no more than two assembled batches exist
    at any instant. A producer failure is re-raised to the consumer at the
    ordinal where it happened, after which iteration stops.
    """

    SLOTS = 2

    def __init__(self, schedule: EpochSchedule, tier, data: HopData,
                 stats: TransferStats | None = None, assembler: BatchAssembler | None = None):
        self.schedule = schedule
        self._asm = assembler if assembler is not None else _prepare(schedule, tier, data, stats)
        self.stats = self._asm.stats
        self._slots = threading.Semaphore(self.SLOTS)
        self._cond = threading.Condition()
        self._ready = []
        self._stop = threading.Event()
        self._held = None
        self._done = False
        self.in_flight = 0
        self.max_in_flight = 0
        self._thread = threading.Thread(target=self._produce, name="ppgnn-prefetch", daemon=True)
        self._thread.start()

    def _put(self, item):
        with self._cond:
            self._ready.append(item)
            self._cond.notify()

    def _produce(self):
        try:
            for i in range(len(self.schedule)):
                while not self._slots.acquire(timeout=0.05):
                    if self._stop.is_set():
                        return
                if self._stop.is_set():
                    return
                batch = self._asm.batch(self.schedule, i)
                with self._cond:
                    self.in_flight += 1
                    self.max_in_flight = max(self.max_in_flight, self.in_flight)
                memtrack.alloc(batch.nbytes)
                self._put(batch)
        except BaseException as exc:  # delivered to the consumer in order
            self._put(exc)
            return
        self._put(_DONE)

    def _release_held(self):
        if self._held is not None:
            memtrack.free(self._held.nbytes)
            with self._cond:
                self.in_flight -= 1
            self._held = None
            self._slots.release()

    def __iter__(self):
        return self

    def __next__(self) -> Batch:
        if self._done:
            raise StopIteration
        self._release_held()
        with self._cond:
            while not self._ready:
                self._cond.wait()
            item = self._ready.pop(0)
        if item is _DONE:
            self.close()
            raise StopIteration
        if isinstance(item, BaseException):
            self.close()
            raise item
        self._held = item
        return item

    def close(self) -> None:
        self._done = True
        self._stop.set()
        self._release_held()
        with self._cond:
            leftovers, self._ready = self._ready, []
        for item in leftovers:
            if isinstance(item, Batch):
                memtrack.free(item.nbytes)
        self._thread.join()
        self._asm.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def prefetch_loader(schedule: EpochSchedule, tier, data: HopData, stats: TransferStats | None = None):
    """Yield the same batches as :func:`serial_loader`, assembled one ahead."""
    loader = PrefetchLoader(schedule, tier, data, stats)
    try:
        yield from loader
    finally:
        loader.close()
