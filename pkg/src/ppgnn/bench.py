"""Serial vs. prefetch loader benchmark with injected latencies."""
from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loader import HopData, Tier, TierKind, prefetch_loader, serial_loader
from .sampler import Method, make_schedule
from .store import write_hop_file


def _consume(loader, compute_us):
    phases = {"assemble_s": 0.0, "transfer_s": 0.0, "compute_s": 0.0, "wait_s": 0.0}
    count = 0
    t_start = time.perf_counter()
    it = iter(loader)
    while True:
        t0 = time.perf_counter()
        try:
            batch = next(it)
        except StopIteration:
            break
        t1 = time.perf_counter()
        phases["wait_s"] += t1 - t0
        phases["assemble_s"] += batch.assemble_s
        phases["transfer_s"] += batch.transfer_s
        if compute_us > 0:
            time.sleep(compute_us / 1e6)
        phases["compute_s"] += time.perf_counter() - t1
        count += 1
    phases["wall_s"] = time.perf_counter() - t_start
    phases["batches"] = count
    return phases


def _median_run(runs):
    return sorted(runs, key=lambda r: r["wall_s"])[len(runs) // 2]


def batches_equal(a_iter, b_iter) -> bool:
    a, b = list(a_iter), list(b_iter)
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        if x.ordinal != y.ordinal or not np.array_equal(x.rows, y.rows):
            return False
        if not np.array_equal(x.labels, y.labels):
            return False
        if any(not np.array_equal(p, q) for p, q in zip(x.hops, y.hops)):
            return False
    return True


def run_bench(batches=200, batch_size=64, features=32, hops=3, tier="staged", method=None,
              chunk_rows=None, inject_assemble_us=1000.0, inject_transfer_us=0.0,
              inject_compute_us=1000.0, seed=0, repeats=3, workdir=None) -> dict:
    """Time one epoch through the serial and the prefetch loader.

    Each loader runs ``repeats`` epochs (interleaved) and the run with the
    median wall time is reported. Returns per-loader phase timings, the
    speedup ``serial / prefetch`` and whether both loaders delivered
    identical batch sequences.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    tier_kind = TierKind.parse(tier)
    if method is None:
        method = Method.CR if tier_kind is TierKind.STORAGE else Method.RR
    method = Method(method)
    if method is Method.CR and chunk_rows is None:
        chunk_rows = batch_size
    rng = np.random.default_rng(seed)
    rows = batches * batch_size
    mats = [rng.standard_normal((rows, features), dtype=np.float32) for _ in range(hops + 1)]
    labels = rng.integers(0, 8, rows)

    tmp = None
    if tier_kind is TierKind.STORAGE:
        if workdir is None:
            tmp = tempfile.TemporaryDirectory(prefix="ppgnn-bench-")
            workdir = tmp.name
        stores = [write_hop_file(m, Path(workdir) / f"hop_0_{r}.ppgf", chunk_rows or batch_size, r)
                  for r, m in enumerate(mats)]
        data = HopData(labels, stores=stores)
    else:
        stores = []
        data = HopData(labels, hops=mats)
    try:
        sched = make_schedule(method, rows, batch_size, seed, chunk_rows)
        timed = Tier(tier_kind, inject_assemble_us, inject_transfer_us)
        runs = {"serial": [], "prefetch": []}
        for _ in range(repeats):
            runs["serial"].append(_consume(serial_loader(sched, timed, data), inject_compute_us))
            runs["prefetch"].append(_consume(prefetch_loader(sched, timed, data), inject_compute_us))
        serial, prefetch = (_median_run(runs[k]) for k in ("serial", "prefetch"))
        plain = Tier(tier_kind)
        same = batches_equal(serial_loader(sched, plain, data), prefetch_loader(sched, plain, data))
    finally:
        for s in stores:
            s.close()
        if tmp is not None:
            tmp.cleanup()
    return {
        "tier": tier_kind.value,
        "method": method.value,
        "batches": len(sched),
        "batch_size": batch_size,
        "inject_assemble_us": inject_assemble_us,
        "inject_transfer_us": inject_transfer_us,
        "inject_compute_us": inject_compute_us,
        "repeats": repeats,
        "serial": serial,
        "prefetch": prefetch,
        "ratio": prefetch["wall_s"] / serial["wall_s"],
        "speedup": serial["wall_s"] / prefetch["wall_s"],
        "sequences_equal": same,
    }
