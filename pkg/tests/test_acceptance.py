"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even when output capture is on).
"""
import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.stats import chisquare

from conftest import dense_operator, rel_fro
from ppgnn.bench import run_bench
from ppgnn.dataset import load_prepared
from ppgnn.errors import ConfigError
from ppgnn.graph import CsrGraph, build_operator, propagate
from ppgnn.loader import TierKind
from ppgnn.models import build_model
from ppgnn.planner import HardwareBudget, estimate_footprint, plan
from ppgnn.sampler import cr_schedule, rr_schedule
from ppgnn.store import write_hop_file
from ppgnn.trainer import TrainConfig, convergence_point, train_run
from test_models import _grad_check
from test_sampler import _perm_counts
from test_trainer import _standalone_linear

GB = 10**9


@contextmanager
def criterion(capsys, num, title, budget_s):
    """Time the body, enforce the runtime budget, print one result line."""
    info = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        elapsed = time.perf_counter() - t0
        assert elapsed < budget_s, f"runtime {elapsed:.2f}s exceeds {budget_s}s"
        ok = True
    finally:
        elapsed = time.perf_counter() - t0
        detail = info.get("detail", "")
        with capsys.disabled():
            print(f"\n[acceptance {num:>2}] {'PASS' if ok else 'FAIL'} {title} "
                  f"({elapsed:.2f}s, budget {budget_s}s){' :: ' + detail if detail else ''}")


def test_01_propagation_matches_dense(capsys):
    with criterion(capsys, 1, "pre-propagation vs dense oracle", 5) as info:
        rng = np.random.default_rng(1)
        worst = 0.0
        for _ in range(20):
            n, f, hops = int(rng.integers(1, 101)), int(rng.integers(1, 17)), int(rng.integers(0, 5))
            m = int(rng.integers(0, 3 * n + 1))
            src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
            keep = src != dst
            src, dst = src[keep], dst[keep]
            undirected = bool(rng.integers(0, 2))
            norm = ["symmetric", "row"][int(rng.integers(0, 2))]
            if not undirected:
                norm = "row"
            g = CsrGraph.from_edges(src, dst, num_nodes=n, undirected=undirected)
            x = rng.standard_normal((n, f)).astype(np.float32)
            b = dense_operator(n, src, dst, undirected=undirected, norm=norm)
            hs = propagate(build_operator(g, norm, True), x, hops)
            for r in range(hops + 1):
                worst = max(worst, rel_fro(hs[r], np.linalg.matrix_power(b, r) @ x.astype(np.float64)))
        info["detail"] = f"worst rel Frobenius error {worst:.2e}"
        assert worst <= 1e-5


def test_02_gradient_fidelity(capsys):
    with criterion(capsys, 2, "finite-difference gradients, all params", 30) as info:
        rng = np.random.default_rng(2)
        worst = {}
        for kind in ("sgc", "sign", "hoga"):
            model = build_model(kind, 5, 3, 2, hidden=8, heads=2, dropout=0.25, seed=3,
                                dtype=np.float64)
            hops = [rng.standard_normal((8, 5)) for _ in range(3)]
            errs = _grad_check(model, hops, rng.integers(0, 3, 8))
            assert set(errs) == set(model.params)
            worst[kind] = max(errs.values())
        info["detail"] = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
        assert max(worst.values()) <= 1e-4


@pytest.mark.slow
def test_03_chunk_reshuffling_parity(capsys, synth_data):
    with criterion(capsys, 3, "CR accuracy parity vs chunk_rows=1", 600) as info:
        batch_size, seeds = 500, range(5)
        chunk_sizes = sorted({1, 250, 500, batch_size})
        gaps = {}
        for model in ("hoga", "sign"):
            means = {}
            for cr in chunk_sizes:
                accs = [train_run(TrainConfig(model=model, hops=3, batch_size=batch_size, epochs=50,
                                              method="CR", chunk_rows=cr, dropout=0.1, seed=s),
                                  synth_data).test_acc for s in seeds]
                means[cr] = float(np.mean(accs))
            gaps[model] = {cr: 100 * abs(means[cr] - means[1]) for cr in chunk_sizes}
            info.setdefault("means", {})[model] = means
        info["detail"] = "; ".join(
            f"{m}: " + ", ".join(f"c{cr}={100 * info['means'][m][cr]:.2f}%" for cr in chunk_sizes)
            for m in gaps)
        assert all(g <= 1.0 for model_gaps in gaps.values() for g in model_gaps.values())


def test_04_tier_equivalence(capsys, synth_dir):
    with criterion(capsys, 4, "bit-identical CR losses across tiers", 120) as info:
        data = load_prepared(synth_dir, in_memory=False)
        try:
            losses = {}
            for model in ("sign", "hoga"):
                for tier in ("storage", "staged", "resident"):
                    cfg = TrainConfig(model=model, hops=3, batch_size=200, epochs=4, method="CR",
                                      chunk_rows=50, tier=tier, dropout=0.2, hidden=32, seed=13)
                    losses[model, tier] = train_run(cfg, data).train_loss
        finally:
            data.close()
        info["detail"] = f"{len(losses)} runs, 4 epochs each"
        for model in ("sign", "hoga"):
            assert losses[model, "resident"] == losses[model, "staged"] == losses[model, "storage"]


def test_05_pipeline_speedup(capsys):
    with criterion(capsys, 5, "prefetch <= 0.65x serial wall time", 120) as info:
        res = run_bench(batches=200, batch_size=64, tier="staged", inject_assemble_us=1000,
                        inject_compute_us=1000, repeats=3)
        info["detail"] = (f"serial {1e3 * res['serial']['wall_s']:.0f} ms, prefetch "
                          f"{1e3 * res['prefetch']['wall_s']:.0f} ms, ratio {res['ratio']:.3f}")
        assert res["batches"] == 200
        assert res["sequences_equal"]
        assert res["ratio"] <= 0.65


def test_06_schedule_laws(capsys):
    with criterion(capsys, 6, "uniform permutations, RR and CR(chunk=1)", 60) as info:
        pvals = {}
        for name, make in (("RR", lambda s: rr_schedule(4, 4, s)),
                           ("CR1", lambda s: cr_schedule(4, 1, 4, s))):
            counts = _perm_counts(make, epochs=10_000)
            pvals[name] = chisquare(counts).pvalue
        info["detail"] = " ".join(f"{k} p={v:.3f}" for k, v in pvals.items())
        assert all(p > 0.01 for p in pvals.values())


def test_07_planner_policy(capsys):
    with criterion(capsys, 7, "planner scenarios, storage+RR, monotonicity", 1) as info:
        got = [
            plan(HardwareBudget(4 * GB, 380 * GB), 1 * GB, GB // 2),
            plan(HardwareBudget(48 * GB, 380 * GB), 100 * GB, 0),
            plan(HardwareBudget(48 * GB, 380 * GB), 1600 * GB, 0),
        ]
        pairs = [(p.tier.value, p.method.value) for p in got]
        assert pairs == [("resident", "RR"), ("staged", "RR"), ("storage", "CR")]
        assert plan(HardwareBudget(48 * GB, 380 * GB), 100 * GB, 0, "CR").method.value == "CR"
        with pytest.raises(ConfigError):
            plan(HardwareBudget(48 * GB, 380 * GB), 1600 * GB, 0, "RR")
        rank = {TierKind.RESIDENT: 0, TierKind.STAGED: 1, TierKind.STORAGE: 2}
        grid = [0, GB, 10 * GB, 100 * GB, 1000 * GB]
        checked = 0
        for (f1, b1), (f2, b2) in itertools.product(itertools.product(grid, grid), repeat=2):
            if f2 >= f1 and b2 >= b1:
                lo = plan(HardwareBudget(f1, b1), 50 * GB, GB)
                hi = plan(HardwareBudget(f2, b2), 50 * GB, GB)
                assert rank[hi.tier] <= rank[lo.tier]
                checked += 1
        info["detail"] = f"{pairs}; {checked} monotone pairs"


def test_08_footprint(capsys):
    with criterion(capsys, 8, "footprint expansion 400 GB -> 1.6 TB", 1) as info:
        base = estimate_footprint(10**9, 100, 0).total_bytes
        expanded = estimate_footprint(10**9, 100, 3, num_operators=1).total_bytes
        info["detail"] = f"{base / GB:.0f} GB -> {expanded / 10**12:.1f} TB"
        assert base == 400 * GB and expanded == 1600 * GB


def test_09_convergence_metric(capsys):
    with criterion(capsys, 9, "convergence_point examples", 1):
        assert convergence_point([0.5, 0.7, 0.99, 1.0]) == 2
        assert convergence_point([0.3, 0.3, 0.3]) == 0
        curve = [0.1, 0.5, 0.9, 0.985, 0.995, 1.0]
        assert convergence_point(curve) == 4


def test_10_store_round_trip(capsys, tmp_path):
    with criterion(capsys, 10, "PPGF bit-exact round trip", 30) as info:
        rng = np.random.default_rng(10)
        n = 1000
        mat = rng.standard_normal((n, 12)).astype(np.float32)
        for chunk_rows in (1, 3, 4096, n, 7):
            with write_hop_file(mat, tmp_path / f"c{chunk_rows}.ppgf", chunk_rows) as store:
                parts = [store.read_chunk(c) for c in range(store.num_chunks)]
                assert np.concatenate(parts).tobytes() == mat.tobytes()
                lo, hi = store.header.chunk_row_range(store.num_chunks - 1)
                assert parts[-1].shape[0] == hi - lo
        info["detail"] = "chunk_rows 1, 3, 4096, n and ragged 7"


def test_11_sgc_equivalence(capsys, synth_data):
    with criterion(capsys, 11, "SGC == standalone linear classifier", 60) as info:
        cfg = TrainConfig(model="sgc", hops=3, batch_size=100, epochs=10, lr=0.01, seed=21)
        r = train_run(cfg, synth_data)
        x = synth_data.hops[3][:synth_data.n_train]
        y = synth_data.labels[:synth_data.n_train]
        losses, params = _standalone_linear(x, y, 21, 10, 100, 0.01)
        info["detail"] = f"final loss {r.train_loss[-1]:.6f}"
        assert r.train_loss == losses
        assert all(np.array_equal(r.model.params[k], params[k]) for k in params)
