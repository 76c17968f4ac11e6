from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ._base import Model, dropout_mask, relu


class SIGN(Model):
    """Per-hop linear encoders, concatenated and fed through an MLP.

    ``z_r = ReLU(hop_r W_r + b_r)`` for every hop, then
    ``logits = MLP(concat(z_0, ..., z_R))``. ``mlp_layers`` counts the linear
    layers of the MLP, so the default of 2 is ``d(R+1) -> d -> C``. Dropout
    follows every hidden ReLU, including the hop encoders.
    """

    kind = "sign"

    def __init__(self, in_dim, num_classes, num_hops, hidden=64, mlp_layers=2, **kw):
        if hidden < 1 or mlp_layers < 1:
            raise ConfigError("hidden and mlp_layers must be >= 1")
        self.hidden = int(hidden)
        self.mlp_layers = int(mlp_layers)
        super().__init__(in_dim, num_classes, num_hops, **kw)

    def config(self):
        return {**super().config(), "hidden": self.hidden, "mlp_layers": self.mlp_layers}

    def _init_params(self, rng):
        d = self.hidden
        for r in range(self.num_hops + 1):
            self._linear_params(rng, f"hop{r}", self.in_dim, d)
        widths = [d * (self.num_hops + 1)] + [d] * (self.mlp_layers - 1) + [self.num_classes]
        for i in range(self.mlp_layers):
            self._linear_params(rng, f"mlp{i}", widths[i], widths[i + 1])

    def forward(self, batch, train=False, dropout_seed=None):
        hops = self._check_hops(batch)
        p = self.params
        rng = self._dropout_rng(train, dropout_seed)
        pre, masks = [], []
        zs = []
        for r, x in enumerate(hops):
            a = x @ p[f"hop{r}.W"] + p[f"hop{r}.b"]
            z = relu(a)
            if rng is not None:
                m = dropout_mask(rng, z.shape, self.dropout, self.dtype)
                z = z * m
                masks.append(m)
            pre.append(a)
            zs.append(z)
        h = np.concatenate(zs, axis=1)
        acts, mlp_pre, mlp_masks = [h], [], []
        for i in range(self.mlp_layers - 1):
            a = h @ p[f"mlp{i}.W"] + p[f"mlp{i}.b"]
            h = relu(a)
            if rng is not None:
                m = dropout_mask(rng, h.shape, self.dropout, self.dtype)
                h = h * m
                mlp_masks.append(m)
            mlp_pre.append(a)
            acts.append(h)
        last = self.mlp_layers - 1
        logits = h @ p[f"mlp{last}.W"] + p[f"mlp{last}.b"]
        tape = {"hops": hops, "pre": pre, "masks": masks, "acts": acts,
                "mlp_pre": mlp_pre, "mlp_masks": mlp_masks}
        return logits, tape

    def backward(self, tape, dlogits):
        p = self.params
        grads = {}
        acts, mlp_pre, mlp_masks = tape["acts"], tape["mlp_pre"], tape["mlp_masks"]
        g = dlogits
        for i in reversed(range(self.mlp_layers)):
            h = acts[i]
            grads[f"mlp{i}.W"] = h.T @ g
            grads[f"mlp{i}.b"] = g.sum(axis=0)
            g = g @ p[f"mlp{i}.W"].T
            if i > 0:
                if mlp_masks:
                    g = g * mlp_masks[i - 1]
                g = g * (mlp_pre[i - 1] > 0)
        d = self.hidden
        for r, x in enumerate(tape["hops"]):
            gz = g[:, r * d:(r + 1) * d]
            if tape["masks"]:
                gz = gz * tape["masks"][r]
            ga = gz * (tape["pre"][r] > 0)
            grads[f"hop{r}.W"] = x.T @ ga
            grads[f"hop{r}.b"] = ga.sum(axis=0)
        return {k: grads[k] for k in p}
