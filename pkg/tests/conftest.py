import numpy as np
import pytest

from ppgnn.dataset import SynthSpec, gen_synth, load_prepared, preprocess
from ppgnn.graph import CsrGraph


def dense_operator(num_nodes, src, dst, undirected=True, norm="symmetric", self_loops=True):
    """Dense float64 normalised adjacency built by explicit loops (test oracle)."""
    a = np.zeros((num_nodes, num_nodes))
    for u, v in zip(src, dst):
        a[u, v] = 1.0
        if undirected:
            a[v, u] = 1.0
    if self_loops:
        for i in range(num_nodes):
            a[i, i] = 1.0
    deg = a.sum(axis=1)
    out = np.zeros_like(a)
    for i in range(num_nodes):
        for j in range(num_nodes):
            if a[i, j]:
                out[i, j] = 1.0 / np.sqrt(deg[i] * deg[j]) if norm == "symmetric" else 1.0 / deg[i]
    return out


def random_edges(rng, n, m):
    src = rng.integers(0, n, m)
    dst = rng.integers(0, n, m)
    keep = src != dst
    return src[keep], dst[keep]


def rel_fro(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    denom = np.linalg.norm(b)
    return np.linalg.norm(a - b) / (denom if denom > 0 else 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def path_graph():
    return CsrGraph.from_edges([0, 1], [1, 2], undirected=True)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """The fixed acceptance dataset: n=2000 SBM, preprocessed with R=3."""
    path = tmp_path_factory.mktemp("sbm")
    gen_synth(SynthSpec(n=2000, classes=4, features=32, p=0.02, q=0.002,
                        signal=1.0, noise=1.0, seed=0), path)
    preprocess(path, 3, chunk_rows=250)
    return path


@pytest.fixture(scope="session")
def synth_data(synth_dir):
    data = load_prepared(synth_dir)
    yield data
    data.close()


@pytest.fixture
def small_dataset(tmp_path):
    path = tmp_path / "small"
    gen_synth(SynthSpec(n=300, classes=3, features=8, p=0.05, q=0.005, seed=3), path)
    preprocess(path, 2, chunk_rows=16)
    return path
