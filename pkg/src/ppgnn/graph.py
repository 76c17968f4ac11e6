"""Graph representation, propagation operators and hop-feature pre-propagation.

The heavy lifting of a pre-propagation GNN happens here, once, before any
training: ``propagate`` turns a node feature matrix ``X`` into the hop stack
``[X, BX, B^2 X, ..., B^R X]`` for a degree-normalised adjacency operator ``B``.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParseError

__all__ = [
    "CsrGraph",
    "NormKind",
    "PropagationOperator",
    "HopFeatureSet",
    "ingest_edge_list",
    "degree_vector",
    "build_operator",
    "spmm",
    "propagate",
    "save_csr",
    "load_csr",
]

CSR_MAGIC = b"PPGC"
CSR_VERSION = 1
_CSR_HEADER = struct.Struct("<4sIQQ")

# ids at or above this are rejected at ingestion; n+1 offsets get allocated
MAX_NODES = 2**31


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CsrGraph:
    """Directed graph in compressed-sparse-row form.

    Column indices are sorted within each row and contain no duplicates.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", _frozen(self.row_offsets, np.int64))
        object.__setattr__(self, "col_indices", _frozen(self.col_indices, np.int64))
        ro, ci, n = self.row_offsets, self.col_indices, self.num_nodes
        if ro.shape != (n + 1,):
            raise ValueError(f"row_offsets must have length n+1={n + 1}, got {ro.shape}")
        if ro[0] != 0 or ro[-1] != ci.size:
            raise ValueError("row_offsets must start at 0 and end at num_edges")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= n):
            raise ValueError("column index out of range")

    @property
    def num_edges(self) -> int:
        return int(self.col_indices.size)

    def neighbors(self, i: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[i]:self.row_offsets[i + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_ids(self) -> np.ndarray:
        """Source node of every stored edge, aligned with ``col_indices``."""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.out_degrees())

    @classmethod
    def from_edges(cls, src, dst, num_nodes=None, undirected=False) -> "CsrGraph":
        """Build a graph from parallel source/destination id arrays.

        Duplicate edges are dropped; with ``undirected`` every edge is mirrored.
        """
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ValueError("src and dst must have the same length")
        if num_nodes is None:
            num_nodes = int(max(src.max(initial=-1), dst.max(initial=-1)) + 1)
        if undirected:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        # one sort on the combined key gives row-major order and exposes dups
        key = np.unique(src * num_nodes + dst)
        rows, cols = np.divmod(key, num_nodes) if num_nodes else (key, key)
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(num_nodes, offsets, cols)

    def to_scipy(self, values=None) -> sp.csr_matrix:
        if values is None:
            values = np.ones(self.num_edges)
        return sp.csr_matrix(
            (values, self.col_indices, self.row_offsets),
            shape=(self.num_nodes, self.num_nodes),
        )


def ingest_edge_list(path, undirected: bool = False, max_nodes: int = MAX_NODES) -> CsrGraph:
    """Read a whitespace-separated ``src dst`` edge list into a CSR graph.

    Blank lines and lines starting with ``#`` are skipped. Malformed lines
    raise :class:`ParseError` carrying the 1-based line number.
    """
    src, dst = [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 'src dst', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(path, lineno, f"non-integer node id in {line!r}") from None
            if u < 0 or v < 0:
                raise ParseError(path, lineno, "node ids must be non-negative")
            if u >= max_nodes or v >= max_nodes:
                raise ParseError(path, lineno, f"node id overflow (limit {max_nodes})")
            src.append(u)
            dst.append(v)
    return CsrGraph.from_edges(src, dst, undirected=undirected)


def degree_vector(g: CsrGraph, with_self_loops: bool = True) -> np.ndarray:
    """Out-degree of every node, plus one per node when self loops are on."""
    deg = g.out_degrees().astype(np.float64)
    if with_self_loops:
        deg += 1.0
    return deg


class NormKind(str, enum.Enum):
    SYMMETRIC = "symmetric"
    ROW = "row"


@dataclass(frozen=True)
class PropagationOperator:
    """Degree-normalised adjacency ``B`` stored as CSR with float64 values."""

    csr: CsrGraph
    values: np.ndarray
    norm_kind: NormKind
    self_loops: bool
    operator_id: int = 0
    _mat: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, np.float64))
        object.__setattr__(self, "norm_kind", NormKind(self.norm_kind))
        if self.values.shape != (self.csr.num_edges,):
            raise ValueError("one value per stored edge required")
        object.__setattr__(self, "_mat", self.csr.to_scipy(self.values))

    @property
    def num_nodes(self) -> int:
        return self.csr.num_nodes

    def to_dense(self) -> np.ndarray:
        return self._mat.toarray()


def build_operator(
    g: CsrGraph,
    norm_kind: NormKind | str = NormKind.SYMMETRIC,
    self_loops: bool = True,
    operator_id: int = 0,
) -> PropagationOperator:
    """Normalise the adjacency of ``g``.

    ``symmetric`` gives ``D^-1/2 A D^-1/2`` and ``row`` gives ``D^-1 A``, where
    ``A`` has the identity added when ``self_loops`` is set. The symmetric form
    is only a symmetric matrix when ``g`` is undirected; that is not checked.
    Rows with zero degree (possible only without self loops) stay empty.
    """
    norm_kind = NormKind(norm_kind)
    n = g.num_nodes
    if self_loops:
        loops = np.arange(n, dtype=np.int64)
        rows = np.concatenate([g.row_ids(), loops])
        cols = np.concatenate([g.col_indices, loops])
        topo = CsrGraph.from_edges(rows, cols, num_nodes=n)
    else:
        topo = g
    deg = np.diff(topo.row_offsets).astype(np.float64)
    r, c = topo.row_ids(), topo.col_indices
    if norm_kind is NormKind.SYMMETRIC:
        values = 1.0 / np.sqrt(deg[r] * deg[c])
    else:
        values = 1.0 / deg[r]
    return PropagationOperator(topo, values, norm_kind, self_loops, operator_id)


def spmm(op: PropagationOperator, x: np.ndarray) -> np.ndarray:
    """Compute ``B @ x`` with float64 accumulation, returned as float32."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != op.num_nodes:
        raise ValueError(
            f"feature matrix has shape {x.shape}, operator expects {op.num_nodes} rows"
        )
    out = op._mat @ x.astype(np.float64, copy=False)
    return np.asarray(out, dtype=np.float32)


@dataclass(frozen=True)
class HopFeatureSet:
    """The hop stack ``[X, BX, ..., B^R X]`` for one operator."""

    hops: tuple
    operator_id: int = 0

    @property
    def num_hops(self) -> int:
        return len(self.hops) - 1

    @property
    def feature_dim(self) -> int:
        return self.hops[0].shape[1]

    @property
    def num_rows(self) -> int:
        return self.hops[0].shape[0]

    def __getitem__(self, r):
        return self.hops[r]

    def __len__(self):
        return len(self.hops)

    def stacked(self) -> np.ndarray:
        """Return the hops as one ``(n, R+1, F)`` array."""
        return np.stack(self.hops, axis=1)


def propagate(op: PropagationOperator, x: np.ndarray, num_hops: int) -> HopFeatureSet:
    """Pre-propagate ``x`` through ``op`` for ``num_hops`` successive hops."""
    if num_hops < 0:
        raise ValueError("num_hops must be >= 0")
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    hops = [x]
    for _ in range(num_hops):
        hops.append(spmm(op, hops[-1]))
    return HopFeatureSet(tuple(hops), op.operator_id)


def save_csr(g: CsrGraph, path) -> None:
    """Write ``g`` in the little-endian PPGC binary layout."""
    with open(path, "wb") as fh:
        fh.write(_CSR_HEADER.pack(CSR_MAGIC, CSR_VERSION, g.num_nodes, g.num_edges))
        fh.write(g.row_offsets.astype("<i8").tobytes())
        fh.write(g.col_indices.astype("<i8").tobytes())


def load_csr(path) -> CsrGraph:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_CSR_HEADER.size)
        if len(head) < _CSR_HEADER.size:
            raise DataError(f"{path}: truncated CSR header")
        magic, version, n, m = _CSR_HEADER.unpack(head)
        if magic != CSR_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != CSR_VERSION:
            raise DataError(f"{path}: unsupported CSR version {version}")
        if size != _CSR_HEADER.size + 8 * (n + 1) + 8 * m:
            raise DataError(f"{path}: file size inconsistent with header")
        ro = np.frombuffer(fh.read(8 * (n + 1)), dtype="<i8")
        ci = np.frombuffer(fh.read(8 * m), dtype="<i8")
    try:
        return CsrGraph(int(n), ro, ci)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
