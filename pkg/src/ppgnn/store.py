"""Chunked, hop-split on-disk feature files (PPGF format).

Each file holds one hop matrix of one operator. Rows are grouped into chunks
of ``chunk_rows``; every chunk starts on a 4096-byte boundary so a chunk can
be fetched with a single aligned read. The layout (little-endian)::

    0     magic "PPGF"        4s
    4     version             u32
    8     num_rows            u64
    16    feature_dim         u32
    20    dtype_code          u8   (0 = float32)
    21    chunk_rows          u32
    25    hop_index           u16
    27    operator_id         u16
    29    data_offset         u64
    ...   zero padding up to data_offset
    data_offset + c * chunk_stride   chunk c, row-major float32, zero padded

Reads use positioned I/O (``os.pread``), so one open store can serve
concurrent readers.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, BadVersionError, DataError, SizeMismatchError, StoreValidationError

__all__ = [
    "ALIGNMENT",
    "ChunkStoreHeader",
    "ChunkStore",
    "write_hop_file",
    "open_hop_store",
    "read_chunk",
    "hop_path",
]

MAGIC = b"PPGF"
VERSION = 1
ALIGNMENT = 4096
DTYPE_FLOAT32 = 0
_HEADER = struct.Struct("<4sIQIBIHHQ")
_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4")}


def _align(nbytes: int) -> int:
    return -(-nbytes // ALIGNMENT) * ALIGNMENT


def hop_path(dataset_dir, operator_id: int, hop_index: int) -> Path:
    return Path(dataset_dir) / f"hop_{operator_id}_{hop_index}.ppgf"


@dataclass(frozen=True)
class ChunkStoreHeader:
    num_rows: int
    feature_dim: int
    chunk_rows: int
    hop_index: int = 0
    operator_id: int = 0
    dtype_code: int = DTYPE_FLOAT32
    version: int = VERSION
    data_offset: int = ALIGNMENT

    @property
    def num_chunks(self) -> int:
        return -(-self.num_rows // self.chunk_rows)

    @property
    def row_bytes(self) -> int:
        return self.feature_dim * _DTYPES[self.dtype_code].itemsize

    @property
    def chunk_stride(self) -> int:
        """Bytes reserved per chunk, padded to the alignment boundary."""
        return _align(self.chunk_rows * self.row_bytes)

    @property
    def file_size(self) -> int:
        return self.data_offset + self.num_chunks * self.chunk_stride

    def chunk_offset(self, chunk_id: int) -> int:
        return self.data_offset + chunk_id * self.chunk_stride

    def chunk_row_range(self, chunk_id: int) -> tuple[int, int]:
        start = chunk_id * self.chunk_rows
        return start, min(start + self.chunk_rows, self.num_rows)

    def pack(self) -> bytes:
        raw = _HEADER.pack(
            MAGIC, self.version, self.num_rows, self.feature_dim, self.dtype_code,
            self.chunk_rows, self.hop_index, self.operator_id, self.data_offset,
        )
        return raw.ljust(self.data_offset, b"\0")

    @classmethod
    def unpack(cls, raw: bytes, path="<buffer>") -> "ChunkStoreHeader":
        if len(raw) < _HEADER.size:
            raise SizeMismatchError(f"{path}: file too short for a PPGF header")
        magic, version, n, f, dcode, crows, hop, op, off = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise BadVersionError(f"{path}: unsupported PPGF version {version}")
        if dcode not in _DTYPES:
            raise StoreValidationError(f"{path}: unknown dtype code {dcode}")
        if crows < 1 or f < 1:
            raise StoreValidationError(f"{path}: chunk_rows and feature_dim must be >= 1")
        if off % ALIGNMENT or off < _HEADER.size:
            raise StoreValidationError(f"{path}: data_offset {off} is not {ALIGNMENT}-aligned")
        return cls(n, f, crows, hop, op, dcode, version, off)


class ChunkStore:
    """Read-only handle on one PPGF hop file."""

    def __init__(self, path, header: ChunkStoreHeader, fd: int):
        self.path = Path(path)
        self.header = header
        self._fd = fd
        self._dtype = _DTYPES[header.dtype_code]

    @property
    def num_chunks(self) -> int:
        return self.header.num_chunks

    @property
    def num_rows(self) -> int:
        return self.header.num_rows

    @property
    def feature_dim(self) -> int:
        return self.header.feature_dim

    @property
    def chunk_rows(self) -> int:
        return self.header.chunk_rows

    def read_chunk(self, chunk_id: int) -> np.ndarray:
        """Return the rows of chunk ``chunk_id`` as a fresh float32 array."""
        h = self.header
        if not 0 <= chunk_id < h.num_chunks:
            raise IndexError(f"chunk {chunk_id} out of range [0, {h.num_chunks}) in {self.path}")
        start, stop = h.chunk_row_range(chunk_id)
        nbytes = (stop - start) * h.row_bytes
        buf = os.pread(self._fd, nbytes, h.chunk_offset(chunk_id))
        if len(buf) != nbytes:
            raise DataError(f"{self.path}: short read on chunk {chunk_id}")
        out = np.frombuffer(buf, dtype=self._dtype).reshape(stop - start, h.feature_dim)
        return out.astype(np.float32)

    def read_rows(self, start: int, stop: int) -> np.ndarray:
        """Read the row range ``[start, stop)``, spanning chunks as needed."""
        h = self.header
        if not 0 <= start <= stop <= h.num_rows:
            raise IndexError(f"row range [{start}, {stop}) outside [0, {h.num_rows})")
        if start == stop:
            return np.empty((0, h.feature_dim), dtype=np.float32)
        first, last = start // h.chunk_rows, (stop - 1) // h.chunk_rows
        if first == last:
            base = first * h.chunk_rows
            return self.read_chunk(first)[start - base:stop - base]
        parts = [self.read_chunk(c) for c in range(first, last + 1)]
        base = first * h.chunk_rows
        return np.concatenate(parts)[start - base:stop - base]

    def read_all(self) -> np.ndarray:
        return self.read_rows(0, self.num_rows)

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    def __repr__(self):
        h = self.header
        return (f"ChunkStore({str(self.path)!r}, rows={h.num_rows}, F={h.feature_dim}, "
                f"chunk_rows={h.chunk_rows}, hop={h.hop_index})")


def write_hop_file(matrix, path, chunk_rows: int, hop_index: int = 0, operator_id: int = 0) -> ChunkStore:
    """Write one hop matrix as a PPGF file and return an open store on it."""
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2 or mat.shape[1] < 1:
        raise ValueError(f"expected a 2-d matrix with at least one column, got {mat.shape}")
    header = ChunkStoreHeader(mat.shape[0], mat.shape[1], chunk_rows, hop_index, operator_id)
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(header.pack())
            for c in range(header.num_chunks):
                start, stop = header.chunk_row_range(c)
                raw = mat[start:stop].tobytes()
                fh.write(raw.ljust(header.chunk_stride, b"\0"))
    except OSError as exc:
        raise DataError(f"failed writing hop file {path}: {exc}") from exc
    return open_hop_store(path)


def open_hop_store(path) -> ChunkStore:
    """Open and validate a PPGF file."""
    path = Path(path)
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError as exc:
        raise DataError(f"cannot open hop file {path}: {exc}") from exc
    try:
        raw = os.pread(fd, _HEADER.size, 0)
        header = ChunkStoreHeader.unpack(raw, path)
        actual = os.fstat(fd).st_size
        if actual != header.file_size:
            raise SizeMismatchError(
                f"{path}: size {actual} does not match header-implied {header.file_size}"
            )
    except BaseException:
        os.close(fd)
        raise
    return ChunkStore(path, header, fd)


def read_chunk(store: ChunkStore, chunk_id: int) -> np.ndarray:
    return store.read_chunk(chunk_id)
