import struct
import threading

import numpy as np
import pytest

from conftest import random_edges
from ppgnn.errors import BadMagicError, BadVersionError, SizeMismatchError
from ppgnn.graph import CsrGraph, build_operator, propagate
from ppgnn.store import ALIGNMENT, hop_path, open_hop_store, write_hop_file


def _write(tmp_path, mat, chunk_rows, name="h.ppgf", **kw):
    return write_hop_file(mat, tmp_path / name, chunk_rows, **kw)


def test_chunk_layout(tmp_path, rng):
    with _write(tmp_path, rng.standard_normal((10, 2)).astype(np.float32), 4) as s:
        assert s.num_chunks == 3
        assert [s.header.chunk_row_range(c) for c in range(3)] == [(0, 4), (4, 8), (8, 10)]
        assert s.read_chunk(2).shape == (2, 2)


def test_tiny_matrix_padded(tmp_path):
    with _write(tmp_path, np.ones((1, 1), np.float32), 8000) as s:
        assert s.num_chunks == 1
        size = (tmp_path / "h.ppgf").stat().st_size
        assert size == ALIGNMENT + 32768
        np.testing.assert_array_equal(s.read_chunk(0), [[1.0]])


@pytest.mark.parametrize("chunk_rows", [1, 3, 4096, 37])
def test_roundtrip_bit_exact(tmp_path, rng, chunk_rows):
    mat = rng.standard_normal((37, 5)).astype(np.float32)
    mat[0, 0] = np.nan
    mat[1, 1] = -0.0
    with _write(tmp_path, mat, chunk_rows) as s:
        got = np.concatenate([s.read_chunk(c) for c in range(s.num_chunks)])
        assert got.tobytes() == mat.tobytes()
        for c in range(s.num_chunks):
            lo, hi = s.header.chunk_row_range(c)
            assert s.read_chunk(c).tobytes() == mat[lo:hi].tobytes()


def test_offsets_aligned_and_size(tmp_path, rng):
    with _write(tmp_path, rng.standard_normal((100, 3)).astype(np.float32), 7) as s:
        h = s.header
        assert h.data_offset % ALIGNMENT == 0
        assert all(h.chunk_offset(c) % ALIGNMENT == 0 for c in range(s.num_chunks))
        assert (tmp_path / "h.ppgf").stat().st_size == h.data_offset + s.num_chunks * h.chunk_stride


def test_header_fields(tmp_path):
    _write(tmp_path, np.zeros((5, 3), np.float32), 2, hop_index=4, operator_id=1).close()
    raw = (tmp_path / "h.ppgf").read_bytes()
    magic, ver, n, f, dcode, crows, hop, op, off = struct.unpack_from("<4sIQIBIHHQ", raw)
    assert (magic, ver, n, f, dcode, crows, hop, op, off) == (b"PPGF", 1, 5, 3, 0, 2, 4, 1, 4096)


def test_read_rows_spanning_chunks(tmp_path, rng):
    mat = rng.standard_normal((20, 2)).astype(np.float32)
    with _write(tmp_path, mat, 3) as s:
        for lo, hi in [(0, 20), (2, 7), (5, 6), (4, 4), (18, 20)]:
            np.testing.assert_array_equal(s.read_rows(lo, hi), mat[lo:hi])
        with pytest.raises(IndexError):
            s.read_rows(5, 21)


def test_out_of_range_chunk(tmp_path):
    with _write(tmp_path, np.zeros((4, 1), np.float32), 2) as s:
        with pytest.raises(IndexError):
            s.read_chunk(2)
        with pytest.raises(IndexError):
            s.read_chunk(-1)


def test_bad_magic(tmp_path):
    _write(tmp_path, np.zeros((4, 1), np.float32), 2).close()
    p = tmp_path / "h.ppgf"
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        open_hop_store(p)


def test_bad_version(tmp_path):
    _write(tmp_path, np.zeros((4, 1), np.float32), 2).close()
    p = tmp_path / "h.ppgf"
    raw = bytearray(p.read_bytes())
    raw[4:8] = (9).to_bytes(4, "little")
    p.write_bytes(bytes(raw))
    with pytest.raises(BadVersionError):
        open_hop_store(p)


def test_truncated_file(tmp_path):
    _write(tmp_path, np.zeros((40, 100), np.float32), 8).close()
    p = tmp_path / "h.ppgf"
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(SizeMismatchError):
        open_hop_store(p)
    p.write_bytes(b"PPGF")
    with pytest.raises(SizeMismatchError):
        open_hop_store(p)


def test_invalid_chunk_rows(tmp_path):
    with pytest.raises(ValueError):
        _write(tmp_path, np.zeros((4, 1), np.float32), 0)


def test_concurrent_reads(tmp_path, rng):
    mat = rng.standard_normal((500, 8)).astype(np.float32)
    errors = []
    with _write(tmp_path, mat, 7) as s:
        def worker(seed):
            r = np.random.default_rng(seed)
            for c in r.integers(0, s.num_chunks, 200):
                lo, hi = s.header.chunk_row_range(int(c))
                if not np.array_equal(s.read_chunk(int(c)), mat[lo:hi]):
                    errors.append(c)
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(6)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    assert not errors


def test_hop_files_reconstruct_propagation(tmp_path, rng):
    src, dst = random_edges(rng, 60, 150)
    op = build_operator(CsrGraph.from_edges(src, dst, num_nodes=60, undirected=True))
    hs = propagate(op, rng.standard_normal((60, 4)).astype(np.float32), 3)
    stores = [write_hop_file(h, hop_path(tmp_path, 0, r), 16, r) for r, h in enumerate(hs.hops)]
    assert {(s.num_rows, s.feature_dim, s.chunk_rows) for s in stores} == {(60, 4, 16)}
    for r, s in enumerate(stores):
        rebuilt = np.concatenate([s.read_chunk(c) for c in range(s.num_chunks)])
        assert rebuilt.tobytes() == hs[r].tobytes()
        assert s.header.hop_index == r
        s.close()
    assert hop_path(tmp_path, 0, 2).name == "hop_0_2.ppgf"
