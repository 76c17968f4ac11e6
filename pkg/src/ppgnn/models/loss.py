from __future__ import annotations

import numpy as np


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``.

    Returns ``(loss, dlogits)`` with ``dlogits = (softmax - onehot) / b``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"expected {b} labels, got shape {labels.shape}")
    if b and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1, keepdims=True)
    idx = np.arange(b)
    loss = float(np.mean(np.log(s[:, 0]) - z[idx, labels]))
    dlogits = e / s
    dlogits[idx, labels] -= 1
    dlogits /= logits.dtype.type(b)
    return loss, dlogits
