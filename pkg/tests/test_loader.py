import time

import numpy as np
import pytest

from ppgnn import memtrack
from ppgnn.errors import ConfigError, DataError
from ppgnn.loader import (
    Batch,
    BatchAssembler,
    HopData,
    PrefetchLoader,
    Tier,
    TransferStats,
    assemble_batch_chunks,
    assemble_batch_rows,
    prefetch_loader,
    serial_loader,
)
from ppgnn.sampler import cr_schedule, rr_schedule
from ppgnn.store import write_hop_file

TIERS = ["resident", "staged", "storage"]


@pytest.fixture
def hop_mats(rng):
    return [rng.standard_normal((103, 6)).astype(np.float32) for _ in range(3)]


@pytest.fixture
def labels(rng):
    return rng.integers(0, 5, 103)


@pytest.fixture
def sources(tmp_path, hop_mats, labels):
    stores = [write_hop_file(m, tmp_path / f"hop_0_{r}.ppgf", 9, r) for r, m in enumerate(hop_mats)]
    data = {
        "resident": HopData(labels, hops=hop_mats),
        "staged": HopData(labels, hops=hop_mats),
        "storage": HopData(labels, stores=stores),
    }
    yield data
    for s in stores:
        s.close()


def _same(a: Batch, b: Batch):
    return (a.ordinal == b.ordinal and np.array_equal(a.rows, b.rows)
            and np.array_equal(a.labels, b.labels)
            and all(x.tobytes() == y.tobytes() for x, y in zip(a.hops, b.hops)))


def test_rows_gather_small():
    data = HopData([7, 8, 9], hops=[np.array([[0], [1], [2]], np.float32)])
    b = assemble_batch_rows("resident", data, [2, 0])
    np.testing.assert_array_equal(b.hops[0], [[2], [0]])
    assert b.labels.tolist() == [9, 7]


@pytest.mark.parametrize("tier", ["resident", "staged"])
def test_rows_identity_prefix(sources, hop_mats, tier):
    b = assemble_batch_rows(tier, sources[tier], np.arange(10))
    for h, m in zip(b.hops, hop_mats):
        np.testing.assert_array_equal(h, m[:10])


@pytest.mark.parametrize("tier", ["resident", "staged"])
def test_rows_vs_per_row_copy(sources, hop_mats, labels, rng, tier):
    ids = rng.integers(0, 103, 40)
    stats = TransferStats()
    b = assemble_batch_rows(tier, sources[tier], ids, stats)
    for h, m in zip(b.hops, hop_mats):
        naive = np.empty((len(ids), m.shape[1]), np.float32)
        for k, i in enumerate(ids):
            naive[k] = m[i]
        assert h.tobytes() == naive.tobytes()
    assert b.labels.tolist() == [labels[i] for i in ids]
    assert stats.bytes_assembled == 40 * 6 * 4 * 3
    assert stats.bytes_transferred == (40 * 6 * 4 * 3 if tier == "staged" else 0)


def test_rows_out_of_range(sources):
    with pytest.raises(IndexError):
        assemble_batch_rows("resident", sources["resident"], [0, 103])


def test_storage_rejects_rows(sources):
    with pytest.raises(ConfigError):
        assemble_batch_rows("storage", sources["storage"], [0])
    with pytest.raises(ConfigError):
        list(serial_loader(rr_schedule(103, 10, 0), "storage", sources["storage"]))


def test_chunks_small_order():
    data = HopData([0, 1, 2, 3], hops=[np.arange(4, dtype=np.float32)[:, None]])
    sched = cr_schedule(4, 2, 4, 0)
    b = assemble_batch_chunks("resident", data, sched, [1, 0])
    assert b.hops[0].ravel().tolist() == [2, 3, 0, 1]
    assert b.rows.tolist() == [2, 3, 0, 1]


@pytest.mark.parametrize("tier", TIERS)
def test_single_ragged_chunk(sources, tier):
    sched = cr_schedule(103, 9, 18, 0)
    b = assemble_batch_chunks(tier, sources[tier], sched, [11])
    assert b.size == 103 % 9


def test_storage_equals_resident(sources):
    sched = cr_schedule(103, 9, 27, 5)
    for i, entry in enumerate(sched.batches):
        ref = assemble_batch_chunks("resident", sources["resident"], sched, entry, ordinal=i)
        for tier in ("staged", "storage"):
            assert _same(ref, assemble_batch_chunks(tier, sources[tier], sched, entry, ordinal=i))


def test_storage_io_error_has_context(sources, tmp_path):
    data = sources["storage"]
    sched = cr_schedule(103, 9, 9, 0)
    data.stores[1].close()
    with pytest.raises(DataError, match=r"hop 1, chunk \d+"):
        assemble_batch_chunks("storage", data, sched, sched.batches[0])


def test_storage_mismatched_stores(tmp_path, labels):
    a = write_hop_file(np.zeros((103, 6), np.float32), tmp_path / "a.ppgf", 9)
    b = write_hop_file(np.zeros((100, 6), np.float32), tmp_path / "b.ppgf", 9)
    with pytest.raises(DataError):
        HopData(labels, stores=[a, b])


def test_serial_loader_order(sources):
    sched = rr_schedule(103, 10, 1)
    batches = list(serial_loader(sched, "staged", sources["staged"]))
    assert len(batches) == len(sched)
    for i, b in enumerate(batches):
        assert b.ordinal == i
        np.testing.assert_array_equal(b.rows, sched.batches[i])


@pytest.mark.parametrize("tier", TIERS)
@pytest.mark.parametrize("method", ["RR", "CR"])
def test_prefetch_matches_serial(sources, tier, method):
    if tier == "storage" and method == "RR":
        pytest.skip("storage is CR only")
    sched = rr_schedule(103, 10, 3) if method == "RR" else cr_schedule(103, 9, 20, 3)
    s = list(serial_loader(sched, tier, sources[tier]))
    p = list(prefetch_loader(sched, tier, sources[tier]))
    assert len(s) == len(p) == len(sched)
    assert all(_same(a, b) for a, b in zip(s, p))


def test_cross_tier_determinism(sources):
    sched = cr_schedule(103, 9, 20, 11)
    runs = [list(prefetch_loader(sched, t, sources[t])) for t in TIERS]
    for other in runs[1:]:
        assert all(_same(a, b) for a, b in zip(runs[0], other))


def test_prefetch_single_batch(sources):
    sched = rr_schedule(5, 10, 0)
    out = list(prefetch_loader(sched, "resident", sources["resident"]))
    assert len(out) == 1 and out[0].size == 5


def test_prefetch_empty_schedule(sources):
    assert list(prefetch_loader(rr_schedule(0, 10, 0), "resident", sources["resident"])) == []


def test_prefetch_holds_at_most_two(sources):
    sched = rr_schedule(103, 5, 0)
    with memtrack.tracking() as tracker:
        loader = PrefetchLoader(sched, Tier("staged", inject_assemble_us=200), sources["staged"])
        for _ in loader:
            time.sleep(0.002)  # slow consumer lets the producer run ahead
            assert loader.in_flight <= 2
        loader.close()
    assert loader.max_in_flight == 2
    one = 5 * 6 * 4 * 3
    assert tracker.peak <= 2 * one
    assert tracker.live == 0


def test_prefetch_error_delivered_in_order(sources):
    sched = rr_schedule(103, 10, 0)

    class Boom(BatchAssembler):
        def batch(self, schedule, i):
            if i == 3:
                raise RuntimeError("boom at 3")
            return super().batch(schedule, i)

    loader = PrefetchLoader(sched, "resident", sources["resident"],
                            assembler=Boom(Tier("resident"), sources["resident"]))
    got = []
    with pytest.raises(RuntimeError, match="boom at 3"):
        for b in loader:
            got.append(b.ordinal)
    assert got == [0, 1, 2]
    with pytest.raises(StopIteration):
        next(loader)


def test_early_close_stops_producer(sources):
    sched = rr_schedule(103, 2, 0)
    loader = PrefetchLoader(sched, "resident", sources["resident"])
    next(loader)
    loader.close()
    assert not loader._thread.is_alive()


def test_staged_epoch_transfer_accounting(sources):
    stats = TransferStats()
    list(prefetch_loader(rr_schedule(103, 8, 0), "staged", sources["staged"], stats))
    assert stats.bytes_transferred == 103 * 6 * 4 * 3
    assert stats.batches_produced == 13


def test_serial_timing_sums_delays(sources):
    d = 2000
    sched = rr_schedule(100, 2, 0)  # 50 batches
    tier = Tier("resident", inject_assemble_us=d)
    t0 = time.perf_counter()
    for _ in serial_loader(sched, tier, sources["resident"]):
        time.sleep(d / 1e6)
    wall = time.perf_counter() - t0
    expected = len(sched) * 2 * d / 1e6
    assert abs(wall - expected) <= 0.10 * expected


def test_prefetch_overlaps(sources):
    d = 2000
    sched = rr_schedule(100, 1, 0)
    tier = Tier("staged", inject_assemble_us=d)

    def run(make):
        t0 = time.perf_counter()
        for _ in make(sched, tier, sources["staged"]):
            time.sleep(d / 1e6)
        return time.perf_counter() - t0

    serial, pre = run(serial_loader), run(prefetch_loader)
    assert pre <= 0.65 * serial


def test_tier_validation():
    with pytest.raises(ConfigError):
        Tier("resident", inject_assemble_us=-1)
    with pytest.raises(ValueError):
        Tier("gpu")
    with pytest.raises(ConfigError):
        BatchAssembler(Tier("storage"), HopData([0], hops=[np.zeros((1, 1), np.float32)]))
