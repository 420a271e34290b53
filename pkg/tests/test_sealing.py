import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oblivann.sealing import (DUMMY_ADDR, OVERHEAD, IntegrityFailure, SealKey, pack_aad, slot_bytes_for)

BS = 32


@pytest.fixture
def key():
    return SealKey(BS, seed=1)


def test_aad_layout():
    assert pack_aad(1, 2, 3) == struct.pack("<Q", 1) + struct.pack("<I", 2) + struct.pack("<Q", 3)
    assert len(pack_aad(0, 0, 0)) == 20


def test_probabilistic_and_round_trip(key):
    data = bytes(range(BS))
    c1 = key.seal(1, 2, 7, 42, data)
    c2 = key.seal(1, 2, 7, 42, data)
    assert c1 != c2
    assert key.open(1, 2, 7, c1) == (42, data)
    assert key.open(1, 2, 7, c2) == (42, data)


def test_dummy_constant_length(key):
    d = key.seal_dummy(0, 0, 0)
    r = key.seal(0, 0, 0, 5, bytes(BS))
    assert len(d) == len(r) == slot_bytes_for(BS) == BS + OVERHEAD
    p = key.open(0, 0, 0, d)
    assert p.is_dummy and p.addr == DUMMY_ADDR and p.data == bytes(BS)


@pytest.mark.parametrize("ctx", [(1, 3, 7), (2, 2, 7), (1, 2, 8), (1, 2, 6)])
def test_context_binding(key, ctx):
    ct = key.seal(1, 2, 7, 9, bytes(BS))
    with pytest.raises(IntegrityFailure):
        key.open(*ctx, ct)


def test_wrong_key_and_length(key):
    ct = key.seal(0, 0, 0, 1, bytes(BS))
    with pytest.raises(IntegrityFailure):
        SealKey(BS, seed=2).open(0, 0, 0, ct)
    with pytest.raises(IntegrityFailure):
        key.open(0, 0, 0, ct[:-1])


def test_replay_old_version(key):
    old = key.seal(4, 1, 7, 3, bytes(BS))
    key.seal(4, 1, 8, 3, bytes(BS))
    with pytest.raises(IntegrityFailure):
        key.open(4, 1, 8, old)


def test_tamper_completeness(key):
    rng = np.random.default_rng(0)
    base = [key.seal(0, k, 0, k, bytes(BS)) for k in range(16)]
    fails = 0
    trials = 10_000
    for _ in range(trials):
        k = int(rng.integers(16))
        buf = bytearray(base[k])
        pos = int(rng.integers(len(buf)))
        buf[pos] ^= int(rng.integers(1, 256))
        try:
            key.open(0, k, 0, bytes(buf))
        except IntegrityFailure:
            fails += 1
    assert fails == trials


@settings(max_examples=60, deadline=None)
@given(b=st.integers(0, 2 ** 40), k=st.integers(0, 2 ** 20), v=st.integers(0, 2 ** 40),
       addr=st.integers(0, 2 ** 63), data=st.binary(min_size=BS, max_size=BS))
def test_round_trip_property(b, k, v, addr, data):
    key = SealKey(BS, seed=3)
    assert key.open(b, k, v, key.seal(b, k, v, addr, data)) == (addr, data)


def test_bucket_helpers(key):
    cts = key.seal_dummies(5, 2, range(4))
    cts[1] = key.seal(5, 1, 2, 11, b"x" * BS)
    out = key.open_bucket(5, 2, cts)
    assert out[1] == (11, b"x" * BS)
    assert all(a == DUMMY_ADDR for i, (a, _) in enumerate(out) if i != 1)
    cts[0], cts[2] = cts[2], cts[0]
    with pytest.raises(IntegrityFailure):
        key.open_bucket(5, 2, cts)


def test_seeded_keys_deterministic_and_independent():
    a, b = SealKey(BS, seed=9, label=b"t"), SealKey(BS, seed=9, label=b"t")
    assert a.seal(0, 0, 0, 1, bytes(BS)) == b.seal(0, 0, 0, 1, bytes(BS))
    assert SealKey(BS, seed=9, label=b"r").fingerprint != a.fingerprint


def test_export_restore_continues_nonces(key):
    key.seal(0, 0, 0, 1, bytes(BS))
    blob = key.export()
    ct_orig = key.seal(0, 0, 0, 1, bytes(BS))
    again = SealKey.restore(BS, blob)
    assert again.fingerprint == key.fingerprint
    assert again.open(0, 0, 0, ct_orig) == (1, bytes(BS))
    assert again.seal(0, 0, 0, 1, bytes(BS))[:12] == ct_orig[:12]
