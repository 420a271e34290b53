import numpy as np
import pytest

from oblivann.blockstore import (Cause, FileBlockStore, IoKind, MemoryBlockStore, StoreGeometry,
                                 StoreUsageError)

GEOM = StoreGeometry(bucket_count=9, slots_per_bucket=12, slot_bytes=20)


def cts(tag, n=12, size=20):
    return [bytes([tag, k]) + bytes(size - 2) for k in range(n)]


@pytest.fixture(params=["memory", "file"])
def store(request, tmp_path):
    if request.param == "memory":
        return MemoryBlockStore(GEOM)
    return FileBlockStore(GEOM, tmp_path / "disk.img")


def test_geometry_validation():
    with pytest.raises(ValueError):
        StoreGeometry(0, 1, 1)
    assert GEOM.bucket_bytes == 240
    assert GEOM.total_bytes == 9 * 240


def test_read_your_write(store):
    store.write_bucket(3, cts(3))
    store.trace_reset()
    assert store.read_slot(3, 5) == cts(3)[5]
    ev = store.trace_snapshot().events
    assert len(ev) == 1
    assert (ev[0].kind, ev[0].bucket_id, ev[0].slot_offset, ev[0].bytes) == (IoKind.READ_SLOT, 3, 5, 20)


def test_boundary_and_out_of_range(store):
    store.read_slot(8, 11)
    for b, k in ((9, 0), (0, 12), (-1, 0)):
        with pytest.raises(StoreUsageError):
            store.read_slot(b, k)
    with pytest.raises(StoreUsageError):
        store.read_bucket(9)


def test_read_bucket_single_event(store):
    store.write_bucket(0, cts(7))
    store.trace_reset()
    assert store.read_bucket(0) == cts(7)
    assert len(store.trace_snapshot()) == 1
    store.read_bucket(0)
    assert store.trace_snapshot().request_count == 2


def test_never_written_bucket_returns_initial_contents(store):
    got = store.read_bucket(4)
    assert len(got) == 12 and all(len(c) == 20 for c in got)


def test_write_validation(store):
    with pytest.raises(StoreUsageError):
        store.write_bucket(1, cts(1, n=11))
    with pytest.raises(StoreUsageError):
        store.write_bucket(1, cts(1, size=19))


def test_no_cross_bucket_bleed(store):
    store.write_bucket(1, cts(1))
    store.write_bucket(2, cts(2))
    store.write_bucket(1, cts(11))
    assert store.read_bucket(1) == cts(11)
    assert store.read_bucket(2) == cts(2)


def test_trace_totals(store):
    store.trace_reset()
    assert store.trace_snapshot().totals == (0, 0, 0)
    store.read_bucket(0)
    store.write_bucket(0, cts(0))
    tr = store.trace_snapshot()
    assert tr.bytes_read == tr.bytes_written == 240
    assert tr.totals == (2, 240, 240)
    assert tr.request_count == len(tr.events)
    assert sum(e.bytes for e in tr.events) == tr.bytes_read + tr.bytes_written
    assert np.all(np.diff(tr.seqs) > 0)


def test_trace_filters():
    st = MemoryBlockStore(GEOM)
    st.read_slot(0, 0, Cause.ACCESS)
    st.read_bucket(1, Cause.EVICT)
    st.write_bucket(1, cts(1), Cause.RESHUFFLE)
    tr = st.trace_snapshot()
    assert len(tr.without(Cause.RESHUFFLE)) == 2
    assert len(tr.only(Cause.ACCESS)) == 1
    assert tr.shape().tolist() == [[IoKind.READ_SLOT, 20], [IoKind.READ_BUCKET, 240], [IoKind.WRITE_BUCKET, 240]]


def test_backends_equivalent(tmp_path):
    a, b = MemoryBlockStore(GEOM), FileBlockStore(GEOM, tmp_path / "x.img")
    rng = np.random.default_rng(0)
    for st in (a, b):
        st.trace_reset()
    for _ in range(200):
        bk = int(rng.integers(9))
        if rng.random() < 0.3:
            data = [bytes(rng.integers(0, 256, 20, dtype=np.uint8)) for _ in range(12)]
            a.write_bucket(bk, data)
            b.write_bucket(bk, data)
        elif rng.random() < 0.5:
            assert a.read_bucket(bk) == b.read_bucket(bk)
        else:
            k = int(rng.integers(12))
            assert a.read_slot(bk, k) == b.read_slot(bk, k)
    ta, tb = a.trace_snapshot(), b.trace_snapshot()
    assert ta.shape().tolist() == tb.shape().tolist()
    assert ta.buckets.tolist() == tb.buckets.tolist()


def test_file_layout(tmp_path):
    st = FileBlockStore(GEOM, tmp_path / "y.img")
    st.write_bucket(2, cts(5))
    st.close()
    raw = (tmp_path / "y.img").read_bytes()
    assert len(raw) == GEOM.total_bytes
    assert raw[2 * 240:3 * 240] == b"".join(cts(5))
    again = FileBlockStore(GEOM, tmp_path / "y.img", create=False)
    assert again.read_bucket(2) == cts(5)


def test_fault_hook_and_corrupt(store):
    store.write_bucket(0, cts(0))
    store.corrupt(0, 3, flip_byte=4)
    assert store.read_slot(0, 3) != cts(0)[3]
    seen = []
    store.fault_hook = lambda kind, b, k, ct: seen.append((kind, b, k)) or b"\x00" * 20
    assert store.read_slot(0, 1) == bytes(20)
    assert seen == [(IoKind.READ_SLOT, 0, 1)]
