"""scikit-learn compatible wrappers.

``HopPropagator`` is a transformer that pre-propagates node features over a
fixed graph; ``PPGNNClassifier`` trains one of the dense models on the
result. Chained in a ``Pipeline`` they form a complete node classifier::

    make_pipeline(HopPropagator(graph, hops=3), PPGNNClassifier(model="sign", hops=3))

Both work on the concatenated layout ``(n, (R+1) * F)`` with hop-major
columns, which keeps them composable with ordinary 2-d estimators.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .dataset import PreparedData
from .graph import CsrGraph, build_operator, propagate
from .models import softmax
from .trainer import TrainConfig, train_run

__all__ = ["HopPropagator", "PPGNNClassifier", "split_hops"]


def _as_graph(graph) -> CsrGraph:
    if isinstance(graph, CsrGraph):
        return graph
    if sp.issparse(graph):
        coo = sp.coo_matrix(graph)
        return CsrGraph.from_edges(coo.row, coo.col, num_nodes=coo.shape[0])
    raise TypeError(f"graph must be a CsrGraph or a scipy sparse adjacency, got {type(graph)!r}")


def split_hops(X, num_hops):
    """Split a concatenated ``(n, (R+1) F)`` array into R+1 hop matrices."""
    X = np.asarray(X)
    if X.ndim == 3:
        if X.shape[1] != num_hops + 1:
            raise ValueError(f"expected {num_hops + 1} hops on axis 1, got {X.shape[1]}")
        return [np.ascontiguousarray(X[:, r], dtype=np.float32) for r in range(num_hops + 1)]
    if X.shape[1] % (num_hops + 1):
        raise ValueError(
            f"{X.shape[1]} columns cannot be split into {num_hops + 1} equal hop blocks"
        )
    return [np.ascontiguousarray(b, dtype=np.float32) for b in np.hsplit(X, num_hops + 1)]


class HopPropagator(TransformerMixin, BaseEstimator):
    """Transform node features ``X`` into ``[X, BX, ..., B^R X]``.

    Parameters
    ----------
    graph : CsrGraph or scipy sparse matrix
        Adjacency of the graph whose nodes are the rows of ``X``.
    hops : int
        Number of propagation steps ``R``.
    norm : {"symmetric", "row"}
        Normalisation of the adjacency.
    self_loops : bool
        Add the identity to the adjacency before normalising.
    """

    def __init__(self, graph=None, hops=3, norm="symmetric", self_loops=True):
        self.graph = graph
        self.hops = hops
        self.norm = norm
        self.self_loops = self_loops

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        if self.graph is None:
            raise ValueError("HopPropagator needs a graph")
        g = _as_graph(self.graph)
        if g.num_nodes != X.shape[0]:
            raise ValueError(f"graph has {g.num_nodes} nodes but X has {X.shape[0]} rows")
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        self.operator_ = build_operator(g, self.norm, self.self_loops)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.hstack(propagate(self.operator_, X, self.hops).hops)

    def transform_hops(self, X):
        """Like :meth:`transform` but return the ``HopFeatureSet`` itself."""
        check_is_fitted(self, "operator_")
        return propagate(self.operator_, check_array(X, dtype=np.float32), self.hops)


class PPGNNClassifier(ClassifierMixin, BaseEstimator):
    """SGC / SIGN / HOGA node classifier on pre-propagated features.

    ``X`` is either ``(n, (hops+1) * F)`` with hop-major column blocks or
    ``(n, hops+1, F)``. Training uses Adam and the chosen reshuffling method on
    an in-memory tier.
    """

    def __init__(self, model="sign", hops=3, hidden=64, heads=4, mlp_layers=2, dropout=0.0,
                 lr=0.01, epochs=50, batch_size=500, method="RR", chunk_rows=None,
                 tier="resident", prefetch=True, random_state=0):
        self.model = model
        self.hops = hops
        self.hidden = hidden
        self.heads = heads
        self.mlp_layers = mlp_layers
        self.dropout = dropout
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.method = method
        self.chunk_rows = chunk_rows
        self.tier = tier
        self.prefetch = prefetch
        self.random_state = random_state

    def _config(self):
        if str(self.tier).lower() == "storage":
            raise ValueError("PPGNNClassifier trains from memory; use the CLI for storage tier")
        return TrainConfig(
            model=self.model, hops=self.hops, batch_size=self.batch_size,
            chunk_rows=self.chunk_rows, method=self.method, tier=self.tier,
            epochs=self.epochs, lr=self.lr, dropout=self.dropout,
            seed=0 if self.random_state is None else self.random_state,
            hidden=self.hidden, heads=self.heads, mlp_layers=self.mlp_layers,
            prefetch=self.prefetch,
        ).validate()

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` enables validation tracking."""
        X, y = check_X_y(X, y, dtype=np.float32, allow_nd=True)
        check_classification_targets(y)
        cfg = self._config()
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        hops = split_hops(X, self.hops)
        labels, n_val = y_enc, 0
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float32, allow_nd=True)
            lookup = {c: i for i, c in enumerate(self.classes_)}
            try:
                yv_enc = np.array([lookup[v] for v in yv], dtype=np.int64)
            except KeyError as exc:
                raise ValueError(f"eval_set has a label unseen in y: {exc}") from None
            hops = [np.vstack([h, hv]) for h, hv in zip(hops, split_hops(Xv, self.hops))]
            labels, n_val = np.concatenate([y_enc, yv_enc]), len(yv)
        data = PreparedData(labels, len(y), n_val, 0, len(self.classes_), hops=hops)
        self.history_ = train_run(cfg, data)
        self.model_ = self.history_.model
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else X.shape[1] * X.shape[2]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32, allow_nd=True)
        return self.model_.predict_logits(split_hops(X, self.hops))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]
