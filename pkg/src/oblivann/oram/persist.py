"""Versioned binary save/load of the trusted ORAM state.

Layout (all integers little-endian)::

    magic "OBVORAM\\0" | u32 format version
    i64 x7 config (d, L, Z, S, A, N, block_size) | u8 variant | i64 G | u8 initialized
    pm_leaf i64[N] | pm_lvl i32[N] | pm_slot i32[N]
    ver i64[B] | count i32[B] | dummy i32[B] | ptrs i32[B, Z+S] | valid u8[B, Z+S] | real_addr i64[B, Z]
    u64 stash entries, each: u64 addr | block bytes
    u32 length | UTF-8 JSON with the generator states

The sealing key is not part of the state; the caller supplies it on load.
"""
from __future__ import annotations

import io
import json
import os
import struct

import numpy as np

from ..blockstore import BlockStore
from ..sealing import SealKey
from .client import LeafStream, TreeOram
from .params import OramConfig, Variant

MAGIC = b"OBVORAM\x00"
FORMAT_VERSION = 1
_VARIANTS = list(Variant)


class StateFormatError(ValueError):
    pass


def _w_arr(f, arr, dtype):
    f.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def _r_arr(f, dtype, shape):
    dt = np.dtype(dtype).newbyteorder("<")
    n = int(np.prod(shape)) * dt.itemsize
    raw = f.read(n)
    if len(raw) != n:
        raise StateFormatError("truncated state file")
    return np.frombuffer(raw, dtype=dt).reshape(shape).astype(np.dtype(dtype))


def dump_state(oram: TreeOram) -> bytes:
    cfg = oram.config
    f = io.BytesIO()
    f.write(MAGIC)
    f.write(struct.pack("<I", FORMAT_VERSION))
    f.write(struct.pack("<7q", cfg.d, cfg.L, cfg.Z, cfg.S, cfg.A, cfg.N, cfg.block_size))
    f.write(struct.pack("<BqB", _VARIANTS.index(oram.variant), oram.G, int(oram.initialized)))
    _w_arr(f, oram.pm_leaf, np.int64)
    _w_arr(f, oram.pm_lvl, np.int32)
    _w_arr(f, oram.pm_slot, np.int32)
    _w_arr(f, oram.ver, np.int64)
    _w_arr(f, oram.count, np.int32)
    _w_arr(f, oram.dummy, np.int32)
    _w_arr(f, oram.ptrs, np.int32)
    _w_arr(f, [list(v) for v in oram.valid], np.uint8)
    _w_arr(f, oram.real_addr, np.int64)
    f.write(struct.pack("<Q", len(oram.stash)))
    for a in sorted(oram.stash):
        f.write(struct.pack("<Q", a))
        f.write(oram.stash[a])
    rng_state = {"perm": oram._perm_rng.bit_generator.state, "stats": oram.stats}
    if isinstance(oram._leaves, LeafStream):
        ls = oram._leaves
        rng_state["leaves"] = {"rng": ls._rng.bit_generator.state, "buf": ls._buf[ls._pos:]}
    blob = json.dumps(rng_state, default=int).encode()
    f.write(struct.pack("<I", len(blob)))
    f.write(blob)
    return f.getvalue()


def save_state(oram: TreeOram, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_state(oram))


def parse_state(raw: bytes, store: BlockStore, key: SealKey, **kw) -> TreeOram:
    f = io.BytesIO(raw)
    if f.read(8) != MAGIC:
        raise StateFormatError("not an ORAM state file")
    (version,) = struct.unpack("<I", f.read(4))
    if version != FORMAT_VERSION:
        raise StateFormatError(f"unsupported state format version {version}")
    d, L, Z, S, A, N, bs = struct.unpack("<7q", f.read(56))
    vi, G, init = struct.unpack("<BqB", f.read(10))
    cfg = OramConfig(d=d, L=L, Z=Z, S=S, A=A, N=N, block_size=bs)
    oram = TreeOram(cfg, store=store, key=key, variant=_VARIANTS[vi], **kw)
    nb, slots = cfg.bucket_count, cfg.slots_per_bucket
    oram.pm_leaf = _r_arr(f, np.int64, (N,)).tolist()
    oram.pm_lvl = _r_arr(f, np.int32, (N,)).tolist()
    oram.pm_slot = _r_arr(f, np.int32, (N,)).tolist()
    oram.ver = _r_arr(f, np.int64, (nb,)).tolist()
    oram.count = _r_arr(f, np.int32, (nb,)).tolist()
    oram.dummy = _r_arr(f, np.int32, (nb,)).tolist()
    oram.ptrs = _r_arr(f, np.int32, (nb, slots)).tolist()
    oram.valid = [bytearray(r.tobytes()) for r in _r_arr(f, np.uint8, (nb, slots))]
    oram.real_addr = _r_arr(f, np.int64, (nb, Z)).tolist()
    (ns,) = struct.unpack("<Q", f.read(8))
    for _ in range(ns):
        (a,) = struct.unpack("<Q", f.read(8))
        oram.stash[a] = f.read(bs)
    (blen,) = struct.unpack("<I", f.read(4))
    st = json.loads(f.read(blen).decode())
    oram._perm_rng.bit_generator.state = st["perm"]
    oram.stats.update(st.get("stats", {}))
    if "leaves" in st and isinstance(oram._leaves, LeafStream):
        oram._leaves._rng.bit_generator.state = st["leaves"]["rng"]
        oram._leaves._buf = list(st["leaves"]["buf"])
        oram._leaves._pos = 0
    oram.G = G
    oram.initialized = bool(init)
    return oram


def load_state(path: str | os.PathLike, store: BlockStore, key: SealKey, **kw) -> TreeOram:
    with open(path, "rb") as fh:
        return parse_state(fh.read(), store, key, **kw)
