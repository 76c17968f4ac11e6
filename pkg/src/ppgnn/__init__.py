"""Pre-propagation GNN training: hop pre-propagation, chunked feature storage,
double-buffered batch loading, SGC/SIGN/HOGA models and placement planning."""
from .errors import ConfigError, DataError, PPGNNError
from .estimators import HopPropagator, PPGNNClassifier
from .graph import (
    CsrGraph,
    HopFeatureSet,
    NormKind,
    PropagationOperator,
    build_operator,
    degree_vector,
    ingest_edge_list,
    propagate,
    spmm,
)
from .loader import Tier, TierKind
from .planner import estimate_footprint, plan
from .sampler import Method, cr_schedule, rr_schedule
from .trainer import TrainConfig, convergence_point, evaluate, train_run

__version__ = "0.1.0"
