from __future__ import annotations

import numpy as np

from ._base import Model


class SGC(Model):
    """Linear classifier on the last hop only: ``logits = B^R X @ W + b``."""

    kind = "sgc"

    def _init_params(self, rng):
        self._linear_params(rng, "out", self.in_dim, self.num_classes)

    def forward(self, batch, train=False, dropout_seed=None):
        x = self._check_hops(batch)[self.num_hops]
        logits = x @ self.params["out.W"] + self.params["out.b"]
        return logits, {"x": x}

    def backward(self, tape, dlogits):
        x = tape["x"]
        return {
            "out.W": x.T @ dlogits,
            "out.b": dlogits.sum(axis=0),
        }
