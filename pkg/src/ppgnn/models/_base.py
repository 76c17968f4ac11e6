from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def glorot_uniform(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def relu(x):
    return np.maximum(x, 0)


def dropout_mask(rng, shape, p, dtype):
    """Inverted-dropout mask: kept units are scaled by ``1 / (1 - p)``."""
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / dtype.type(1.0 - p)


def get_hops(batch):
    """Accept a ``Batch``, a ``HopFeatureSet`` or a plain sequence of matrices."""
    return tuple(getattr(batch, "hops", batch))


class Model:
    """Shared plumbing for the dense pre-propagation models.

    Subclasses populate ``self.params`` (name -> array) in ``_init_params`` and
    implement ``forward`` / ``backward``. Parameters live in ``self.dtype``;
    ``astype(np.float64)`` gives the double-precision shadow used by gradient
    checks.
    """

    kind = None

    def __init__(self, in_dim, num_classes, num_hops, dropout=0.0, seed=0, dtype=np.float32):
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        if num_hops < 0 or in_dim < 1 or num_classes < 1:
            raise ConfigError("need num_hops >= 0, in_dim >= 1, num_classes >= 1")
        self.in_dim = int(in_dim)
        self.num_classes = int(num_classes)
        self.num_hops = int(num_hops)
        self.dropout = float(dropout)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params = {}
        self._init_params(np.random.default_rng(self.seed))

    def _init_params(self, rng):
        raise NotImplementedError

    def config(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "num_classes": self.num_classes,
            "num_hops": self.num_hops,
            "dropout": self.dropout,
            "seed": self.seed,
        }

    def astype(self, dtype):
        clone = self.__class__(**{**self.config(), "dtype": dtype})
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return clone

    def _linear_params(self, rng, name, fan_in, fan_out):
        self.params[f"{name}.W"] = glorot_uniform(rng, fan_in, fan_out, self.dtype)
        self.params[f"{name}.b"] = np.zeros(fan_out, dtype=self.dtype)

    def _check_hops(self, batch):
        hops = get_hops(batch)
        if len(hops) != self.num_hops + 1:
            raise ValueError(f"{self.kind} expects {self.num_hops + 1} hop matrices, got {len(hops)}")
        rows = {h.shape[0] for h in hops}
        if len(rows) != 1 or any(h.ndim != 2 or h.shape[1] != self.in_dim for h in hops):
            raise ValueError(
                f"hop matrices must all be (b, {self.in_dim}); got {[h.shape for h in hops]}"
            )
        return tuple(np.asarray(h, dtype=self.dtype) for h in hops)

    def _dropout_rng(self, train, dropout_seed):
        if not train or self.dropout == 0.0:
            return None
        return np.random.default_rng(dropout_seed)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def predict_logits(self, batch):
        return self.forward(batch, train=False)[0]

    def forward(self, batch, train=False, dropout_seed=None):
        raise NotImplementedError

    def backward(self, tape, dlogits):
        raise NotImplementedError


def tape_nbytes(tape: dict) -> int:
    total = 0
    for v in tape.values():
        if isinstance(v, np.ndarray):
            total += v.nbytes
        elif isinstance(v, (list, tuple)):
            total += sum(a.nbytes for a in v if isinstance(a, np.ndarray))
    return total
