from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from ._base import Model, dropout_mask, relu


def _softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class HOGA(Model):
    """Hop-wise attention: each node's R+1 hop vectors are its tokens.

    One multi-head self-attention layer over the projected tokens, mean-pooled,
    then a two-layer MLP (``d_model -> d_model -> C``) with dropout after the
    hidden ReLU. Attention scores are scaled by ``1/sqrt(d_model / heads)``.
    """

    kind = "hoga"

    def __init__(self, in_dim, num_classes, num_hops, d_model=64, heads=4, **kw):
        if d_model < 1 or heads < 1 or d_model % heads:
            raise ConfigError(f"d_model ({d_model}) must be a positive multiple of heads ({heads})")
        self.d_model = int(d_model)
        self.heads = int(heads)
        super().__init__(in_dim, num_classes, num_hops, **kw)

    @property
    def head_dim(self):
        return self.d_model // self.heads

    def config(self):
        return {**super().config(), "d_model": self.d_model, "heads": self.heads}

    def _init_params(self, rng):
        d = self.d_model
        self._linear_params(rng, "in", self.in_dim, d)
        for name in ("q", "k", "v", "o"):
            self._linear_params(rng, name, d, d)
        self._linear_params(rng, "mlp0", d, d)
        self._linear_params(rng, "mlp1", d, self.num_classes)

    def _split(self, t):
        b, n, _ = t.shape
        return t.reshape(b, n, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def _merge(self, t):
        b, _, n, _ = t.shape
        return t.transpose(0, 2, 1, 3).reshape(b, n, self.d_model)

    def forward(self, batch, train=False, dropout_seed=None):
        hops = self._check_hops(batch)
        p = self.params
        x = np.stack(hops, axis=1)  # (b, T, F)
        tok = x @ p["in.W"] + p["in.b"]
        q = self._split(tok @ p["q.W"] + p["q.b"])
        k = self._split(tok @ p["k.W"] + p["k.b"])
        v = self._split(tok @ p["v.W"] + p["v.b"])
        scale = self.dtype.type(1.0 / np.sqrt(self.head_dim))
        attn = _softmax((q @ k.transpose(0, 1, 3, 2)) * scale)  # (b, H, T, T)
        ctx = self._merge(attn @ v)
        out = ctx @ p["o.W"] + p["o.b"]
        pooled = out.mean(axis=1)
        a0 = pooled @ p["mlp0.W"] + p["mlp0.b"]
        h = relu(a0)
        mask = None
        rng = self._dropout_rng(train, dropout_seed)
        if rng is not None:
            mask = dropout_mask(rng, h.shape, self.dropout, self.dtype)
            h = h * mask
        logits = h @ p["mlp1.W"] + p["mlp1.b"]
        tape = {"x": x, "tok": tok, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
                "pooled": pooled, "a0": a0, "h": h, "mask": mask}
        return logits, tape

    def backward(self, tape, dlogits):
        p = self.params
        g = {}
        g["mlp1.W"] = tape["h"].T @ dlogits
        g["mlp1.b"] = dlogits.sum(axis=0)
        dh = dlogits @ p["mlp1.W"].T
        if tape["mask"] is not None:
            dh = dh * tape["mask"]
        da0 = dh * (tape["a0"] > 0)
        g["mlp0.W"] = tape["pooled"].T @ da0
        g["mlp0.b"] = da0.sum(axis=0)
        dpooled = da0 @ p["mlp0.W"].T

        ntok = tape["x"].shape[1]
        dout = np.repeat(dpooled[:, None, :] / self.dtype.type(ntok), ntok, axis=1)
        g["o.W"] = np.einsum("btd,bte->de", tape["ctx"], dout)
        g["o.b"] = dout.sum(axis=(0, 1))
        dctx = self._split(dout @ p["o.W"].T)

        attn, q, k, v = tape["attn"], tape["q"], tape["k"], tape["v"]
        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        scale = self.dtype.type(1.0 / np.sqrt(self.head_dim))
        ds = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q

        tok = tape["tok"]
        dtok = np.zeros_like(tok)
        for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
            dproj = self._merge(dproj)
            g[f"{name}.W"] = np.einsum("btd,bte->de", tok, dproj)
            g[f"{name}.b"] = dproj.sum(axis=(0, 1))
            dtok += dproj @ p[f"{name}.W"].T
        g["in.W"] = np.einsum("btf,btd->fd", tape["x"], dtok)
        g["in.b"] = dtok.sum(axis=(0, 1))
        return {name: g[name] for name in p}
