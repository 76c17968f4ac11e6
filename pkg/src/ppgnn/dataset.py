"""Dataset directory layout, the synthetic SBM generator and preprocessing.

A dataset directory holds::

    graph.ppgc     CSR binary (see ``graph.save_csr``)
    features.bin   u64 n, u64 F, then n*F float32 (little-endian)
    labels.bin     u32 per node
    splits.bin     u8 per node: 0 train, 1 val, 2 test (anything else: unused)
    meta           ``key=value`` text lines: n, F, C, train, val, test

``preprocess`` adds one ``hop_<k>_<r>.ppgf`` file per hop, ``perm.bin``
(u64 original node id for every stored row; train rows first, then val,
then test) and ``preprocess.json``.
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .graph import CsrGraph, build_operator, load_csr, propagate, save_csr
from .loader import HopData, TierKind
from .store import hop_path, open_hop_store, write_hop_file

__all__ = [
    "SynthSpec",
    "DatasetDir",
    "PreparedData",
    "gen_synth",
    "preprocess",
    "load_prepared",
    "write_features",
    "read_features",
]

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
_FEAT_HEADER = struct.Struct("<QQ")


def write_features(path, x) -> None:
    x = np.ascontiguousarray(x, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(*x.shape))
        fh.write(x.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise DataError(f"{path}: truncated feature header")
    n, f = _FEAT_HEADER.unpack_from(raw)
    if len(raw) != _FEAT_HEADER.size + 4 * n * f:
        raise DataError(f"{path}: size does not match header ({n} x {f})")
    return np.frombuffer(raw, dtype="<f4", offset=_FEAT_HEADER.size).reshape(n, f).astype(np.float32)


def _write_meta(path, meta: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def _read_meta(path) -> dict:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = int(value)
    return meta


@dataclass(frozen=True)
class SynthSpec:
    """Stochastic block model with class-mean node features.

    Features are ``signal * mu_c + Normal(0, noise^2)`` where ``mu_c`` is a
    random unit vector per class.
    """

    n: int = 2000
    classes: int = 4
    features: int = 32
    p: float = 0.02
    q: float = 0.002
    signal: float = 1.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.classes < 1 or self.features < 1:
            raise ConfigError("n, classes and features must be >= 1")
        if not (0.0 <= self.p <= 1.0 and 0.0 <= self.q <= 1.0):
            raise ConfigError("edge probabilities must lie in [0, 1]")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")


def _sample_block(rng, rows, cols, prob, same):
    """Sample Bernoulli(prob) edges between two node sets (upper triangle if ``same``)."""
    nr, nc = rows.size, cols.size
    total = nr * (nr - 1) // 2 if same else nr * nc
    if total == 0 or prob == 0.0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    k = rng.binomial(total, prob)
    flat = np.sort(rng.choice(total, size=k, replace=False))
    if same:
        # invert the row-major upper-triangle index
        i = (nr - 2 - np.floor(np.sqrt(-8.0 * flat + 4.0 * nr * (nr - 1) - 7) / 2.0 - 0.5)).astype(np.int64)
        j = flat + i + 1 - nr * (nr - 1) // 2 + (nr - i) * ((nr - i) - 1) // 2
        return rows[i], rows[j]
    return rows[flat // nc], cols[flat % nc]


def gen_synth(spec: SynthSpec, out_dir) -> "DatasetDir":
    """Generate an undirected SBM node-classification dataset into ``out_dir``."""
    rng = np.random.default_rng(spec.seed)
    n, c, f = spec.n, spec.classes, spec.features
    labels = rng.permutation(np.arange(n) % c).astype(np.int64)
    blocks = [np.flatnonzero(labels == k) for k in range(c)]
    src, dst = [], []
    for a in range(c):
        for b in range(a, c):
            s, d = _sample_block(rng, blocks[a], blocks[b], spec.p if a == b else spec.q, a == b)
            src.append(s)
            dst.append(d)
    graph = CsrGraph.from_edges(np.concatenate(src), np.concatenate(dst), num_nodes=n, undirected=True)

    means = rng.normal(size=(c, f))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    x = spec.signal * means[labels] + spec.noise * rng.normal(size=(n, f))

    order = rng.permutation(n)
    n_train, n_val = int(round(0.6 * n)), int(round(0.2 * n))
    splits = np.full(n, SPLIT_TEST, dtype=np.uint8)
    splits[order[:n_train]] = SPLIT_TRAIN
    splits[order[n_train:n_train + n_val]] = SPLIT_VAL

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_csr(graph, out / "graph.ppgc")
    write_features(out / "features.bin", x.astype(np.float32))
    labels.astype("<u4").tofile(out / "labels.bin")
    splits.tofile(out / "splits.bin")
    _write_meta(out / "meta", {
        "n": n, "F": f, "C": c,
        "train": int((splits == SPLIT_TRAIN).sum()),
        "val": int((splits == SPLIT_VAL).sum()),
        "test": int((splits == SPLIT_TEST).sum()),
    })
    (out / "synth.json").write_text(json.dumps(asdict(spec), indent=2) + "\n")
    return DatasetDir(out)


class DatasetDir:
    """Accessor for the raw files of a dataset directory."""

    REQUIRED = ("graph.ppgc", "features.bin", "labels.bin", "splits.bin", "meta")

    def __init__(self, path):
        self.path = Path(path)
        missing = [name for name in self.REQUIRED if not (self.path / name).exists()]
        if missing:
            raise DataError(f"{self.path}: missing dataset files {missing}")
        self.meta = _read_meta(self.path / "meta")

    @property
    def num_nodes(self) -> int:
        return self.meta["n"]

    @property
    def num_classes(self) -> int:
        return self.meta["C"]

    def graph(self) -> CsrGraph:
        return load_csr(self.path / "graph.ppgc")

    def features(self) -> np.ndarray:
        return read_features(self.path / "features.bin")

    def labels(self) -> np.ndarray:
        return np.fromfile(self.path / "labels.bin", dtype="<u4").astype(np.int64)

    def splits(self) -> np.ndarray:
        return np.fromfile(self.path / "splits.bin", dtype=np.uint8)

    def validate(self):
        g, x, y, s = self.graph(), self.features(), self.labels(), self.splits()
        n = self.num_nodes
        if not (g.num_nodes == x.shape[0] == y.size == s.size == n):
            raise DataError(
                f"{self.path}: files disagree on n (meta {n}, graph {g.num_nodes}, "
                f"features {x.shape[0]}, labels {y.size}, splits {s.size})"
            )
        if y.size and y.max() >= self.num_classes:
            raise DataError(f"{self.path}: label out of range for C={self.num_classes}")
        return g, x, y, s

    def split_permutation(self) -> np.ndarray:
        """Node ids ordered train, then val, then test (ascending within each)."""
        s = self.splits()
        return np.concatenate([np.flatnonzero(s == k) for k in (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST)])


def preprocess(dataset, num_hops: int, norm_kind="symmetric", self_loops: bool = True,
               chunk_rows: int = 256, operator_id: int = 0) -> dict:
    """Propagate features over the full graph and write split rows to hop files.

    Returns the summary that is also written to ``preprocess.json``.
    """
    if num_hops < 0:
        raise ConfigError("hops must be >= 0")
    if chunk_rows < 1:
        raise ConfigError("chunk_rows must be >= 1")
    ds = dataset if isinstance(dataset, DatasetDir) else DatasetDir(dataset)
    t0 = time.perf_counter()
    g, x, _, s = ds.validate()
    op = build_operator(g, norm_kind, self_loops, operator_id)
    hop_set = propagate(op, x, num_hops)
    t_prop = time.perf_counter() - t0

    perm = ds.split_permutation()
    perm.astype("<u8").tofile(ds.path / "perm.bin")
    for r, mat in enumerate(hop_set.hops):
        store = write_hop_file(mat[perm], hop_path(ds.path, operator_id, r), chunk_rows, r, operator_id)
        store.close()
    for stale in ds.path.glob(f"hop_{operator_id}_*.ppgf"):
        r = int(stale.stem.rsplit("_", 1)[1])
        if r > num_hops:
            stale.unlink()
    wall = time.perf_counter() - t0

    counts = {name: int((s == k).sum()) for name, k in
              (("train", SPLIT_TRAIN), ("val", SPLIT_VAL), ("test", SPLIT_TEST))}
    raw_bytes = perm.size * x.shape[1] * 4
    summary = {
        "num_hops": num_hops,
        "norm": str(op.norm_kind.value),
        "self_loops": bool(self_loops),
        "chunk_rows": chunk_rows,
        "operator_id": operator_id,
        "num_operators": 1,
        "feature_dim": int(x.shape[1]),
        "num_classes": ds.num_classes,
        **counts,
        "raw_feature_bytes": raw_bytes,
        "hop_feature_bytes": raw_bytes * (num_hops + 1),
        "expansion_factor": num_hops + 1,
        "propagate_seconds": t_prop,
        "wall_seconds": wall,
    }
    (ds.path / "preprocess.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


class PreparedData:
    """Hop features of the split rows, ready for training and evaluation.

    Row order is the preprocess permutation: ``[0, n_train)`` are training
    rows, followed by validation and test rows.
    """

    def __init__(self, labels, n_train, n_val, n_test, num_classes, hops=None, stores=None):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_train, self.n_val, self.n_test = int(n_train), int(n_val), int(n_test)
        self.num_classes = int(num_classes)
        self.hops = None if hops is None else [np.ascontiguousarray(h, np.float32) for h in hops]
        self.stores = stores
        if self.labels.size != self.n_train + self.n_val + self.n_test:
            raise DataError("label count does not match split sizes")
        rows = self.hops[0].shape[0] if self.hops is not None else stores[0].num_rows
        if rows != self.labels.size:
            raise DataError(f"hop data has {rows} rows, labels have {self.labels.size}")
        self._eval_cache = {}

    @property
    def num_hops(self) -> int:
        return (len(self.hops) if self.hops is not None else len(self.stores)) - 1

    @property
    def feature_dim(self) -> int:
        return self.hops[0].shape[1] if self.hops is not None else self.stores[0].feature_dim

    def split_range(self, split: str) -> tuple[int, int]:
        bounds = {"train": (0, self.n_train),
                  "val": (self.n_train, self.n_train + self.n_val),
                  "test": (self.n_train + self.n_val, self.labels.size)}
        return bounds[split]

    def train_data(self, tier, num_hops: int | None = None) -> HopData:
        """HopData for the training split on ``tier``, limited to ``num_hops``."""
        r = self.num_hops if num_hops is None else num_hops
        if r > self.num_hops:
            raise ConfigError(f"requested {r} hops but only {self.num_hops} were preprocessed")
        kind = TierKind.parse(getattr(tier, "kind", tier))
        labels = self.labels[:self.n_train]
        if kind is TierKind.STORAGE:
            if self.stores is None:
                raise ConfigError("storage tier needs preprocessed hop files")
            return HopData(labels, stores=self.stores[:r + 1])
        hops = self._memory_hops()
        return HopData(labels, hops=[h[:self.n_train] for h in hops[:r + 1]])

    def _memory_hops(self):
        if self.hops is None:
            self.hops = [s.read_all() for s in self.stores]
        return self.hops

    def split_hops(self, split: str, num_hops: int | None = None):
        """In-memory hop matrices and labels for an evaluation split."""
        r = self.num_hops if num_hops is None else num_hops
        start, stop = self.split_range(split)
        if self.hops is not None:
            hops = [h[start:stop] for h in self.hops[:r + 1]]
        else:
            key = (start, stop)
            if key not in self._eval_cache:
                self._eval_cache[key] = [s.read_rows(start, stop) for s in self.stores]
            hops = self._eval_cache[key][:r + 1]
        return hops, self.labels[start:stop]

    def close(self):
        for s in self.stores or []:
            s.close()


def load_prepared(dataset_dir, in_memory: bool = True) -> PreparedData:
    """Open a preprocessed dataset directory.

    With ``in_memory`` the hop files are read fully; otherwise only the open
    stores are kept and training rows are fetched on demand.
    """
    ds = DatasetDir(dataset_dir)
    info_path = ds.path / "preprocess.json"
    if not info_path.exists():
        raise DataError(f"{ds.path}: not preprocessed (run `ppgnn preprocess` first)")
    info = json.loads(info_path.read_text())
    op = info["operator_id"]
    stores = [open_hop_store(hop_path(ds.path, op, r)) for r in range(info["num_hops"] + 1)]
    meta = {(s.num_rows, s.feature_dim, s.chunk_rows) for s in stores}
    if len(meta) != 1:
        raise DataError(f"{ds.path}: hop files disagree on rows/feature_dim/chunk_rows")
    perm = np.fromfile(ds.path / "perm.bin", dtype="<u8").astype(np.int64)
    labels = ds.labels()[perm]
    hops = [s.read_all() for s in stores] if in_memory else None
    return PreparedData(labels, info["train"], info["val"], info["test"], info["num_classes"],
                        hops=hops, stores=stores)
