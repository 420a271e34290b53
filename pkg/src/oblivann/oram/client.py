"""The d-ary large-bucket tree ORAM client.

All trusted state (position map, per-bucket metadata, stash) lives here; the
:class:`~oblivann.blockstore.BlockStore` only ever sees sealed slots.
"""
from __future__ import annotations

from typing import Iterable, Iterator, Mapping, Optional

import numpy as np

from ..blockstore import BlockStore, Cause, MemoryBlockStore, StoreGeometry
from ..sealing import DUMMY_ADDR, IntegrityFailure, SealKey
from .params import OramConfig, Variant, eviction_leaf

READ, WRITE, MODIFY = "read", "write", "modify"
NONE = -1


class OramAborted(RuntimeError):
    """The instance saw an integrity failure earlier and refuses further work."""


class StashOverflow(RuntimeError):
    pass


class SetupError(RuntimeError):
    pass


class DebugDisabled(RuntimeError):
    pass


class LeafStream:
    """Uniform leaf draws from a numpy generator, buffered to amortize call overhead."""

    def __init__(self, rng: np.random.Generator, leaf_count: int, chunk: int = 4096):
        self._rng = rng
        self._n = leaf_count
        self._chunk = chunk
        self._buf: list[int] = []
        self._pos = 0

    def __next__(self) -> int:
        if self._pos >= len(self._buf):
            self._buf = self._rng.integers(0, self._n, size=self._chunk).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def __iter__(self):
        return self


class ArrayLeafStream:
    """Replays a fixed leaf sequence (used to cross-check against the simulator)."""

    def __init__(self, leaves: Iterable[int]):
        self._it: Iterator[int] = iter(np.asarray(leaves).tolist())

    def __next__(self) -> int:
        return next(self._it)

    def __iter__(self):
        return self


def _meta_bytes(cfg: OramConfig) -> int:
    # ver + count/dummy + ptrs + valid bits + addresses of the Z real slots
    slots = cfg.Z + cfg.S
    return 8 + 4 + 2 * slots + (slots + 7) // 8 + 8 * cfg.Z


class TreeOram:
    """Access/evict/reshuffle state machine over one block store.

    ``leaky=True`` deliberately skips dummy reads on the read path. It exists
    only as a negative control for the trace auditor.
    """

    def __init__(self, config: OramConfig, store: Optional[BlockStore] = None, key: Optional[SealKey] = None,
                 seed: Optional[int] = None, variant: Variant | str = Variant.FULL_BUCKET_READS,
                 leaf_stream=None, stash_limit: int = 10 ** 6, debug: bool = False, leaky: bool = False):
        self.config = cfg = config
        self.variant = Variant(variant)
        self.key = key if key is not None else SealKey(cfg.block_size, seed=seed, label=b"oram")
        if self.key.block_size != cfg.block_size:
            raise ValueError("sealing key block size differs from the ORAM block size")
        geom = StoreGeometry(cfg.bucket_count, cfg.slots_per_bucket, self.key.slot_bytes)
        if store is None:
            store = MemoryBlockStore(geom)
        elif store.geometry != geom:
            raise ValueError(f"store geometry {store.geometry} does not match {geom}")
        self.store = store
        ss = np.random.SeedSequence(seed)
        leaf_ss, perm_ss = ss.spawn(2)
        self._perm_rng = np.random.default_rng(perm_ss)
        self._leaves = leaf_stream if leaf_stream is not None else LeafStream(
            np.random.default_rng(leaf_ss), cfg.leaf_count)
        self.stash_limit = stash_limit
        self.debug = debug
        self.leaky = leaky
        self.aborted = False
        self.meta_bytes = _meta_bytes(cfg)

        self._offsets = cfg.level_offsets()
        self._div = [cfg.d ** (cfg.L - i) for i in range(cfg.L + 1)]
        nb, slots = cfg.bucket_count, cfg.slots_per_bucket
        self.pm_leaf: list[int] = [0] * cfg.N
        self.pm_lvl: list[int] = [NONE] * cfg.N
        self.pm_slot: list[int] = [NONE] * cfg.N
        self.ver: list[int] = [0] * nb
        self.count: list[int] = [0] * nb
        self.dummy: list[int] = [0] * nb
        self.ptrs: list[list[int]] = [list(range(slots)) for _ in range(nb)]
        self.valid: list[bytearray] = [bytearray(slots) for _ in range(nb)]
        self.real_addr: list[list[int]] = [[NONE] * cfg.Z for _ in range(nb)]
        self.stash: dict[int, bytes] = {}
        self.G = 0
        self.stats = {"accesses": 0, "evictions": 0, "reshuffles": 0, "max_stash": 0}
        self.eviction_log: list[int] = []
        self.initialized = False

    # ------------------------------------------------------------------ setup
    def setup_bulk(self, blocks: Mapping[int, bytes] | None = None, setup_stash_limit: Optional[int] = None) -> None:
        """Trusted-side initial load: assign leaves, place greedily leaf-to-root, seal every bucket once."""
        if self.initialized:
            raise SetupError("already initialized")
        cfg = self.config
        blocks = dict(blocks or {})
        if len(blocks) > cfg.N:
            raise SetupError(f"{len(blocks)} blocks exceed capacity N={cfg.N}")
        for a, v in blocks.items():
            if not 0 <= a < cfg.N:
                raise SetupError(f"address {a} out of range")
            if len(v) != cfg.block_size:
                raise SetupError(f"block {a} has {len(v)} bytes, expected {cfg.block_size}")
        nxt = self._leaves.__next__
        for a in range(cfg.N):
            self.pm_leaf[a] = nxt()
        fill = [0] * cfg.bucket_count
        content: list[list[tuple[int, bytes]]] = [[] for _ in range(cfg.bucket_count)]
        for a in sorted(blocks):
            leaf = self.pm_leaf[a]
            for i in range(cfg.L, -1, -1):
                b = self._offsets[i] + leaf // self._div[i]
                if fill[b] < cfg.Z:
                    self.pm_lvl[a] = i
                    self.pm_slot[a] = fill[b]
                    content[b].append((a, blocks[a]))
                    fill[b] += 1
                    break
            else:
                self.stash[a] = blocks[a]
        limit = self.stash_limit if setup_stash_limit is None else setup_stash_limit
        if len(self.stash) > limit:
            raise SetupError(f"post-placement stash {len(self.stash)} exceeds limit {limit}")
        for b in range(cfg.bucket_count):
            self._seal_bucket(b, content[b], Cause.SETUP)
        self.initialized = True
        self.stats["max_stash"] = len(self.stash)

    # ------------------------------------------------------------------ public API
    def access(self, addr: int, op: str = READ, data: Optional[bytes] = None, fn=None) -> Optional[bytes]:
        """One oblivious access. Returns the block value before any write (None if never written).

        ``op=MODIFY`` applies ``fn(old) -> new`` to the retrieved value inside the
        same access, which is indistinguishable from a read or write.
        """
        if self.aborted:
            raise OramAborted("ORAM instance aborted after an integrity failure")
        if not self.initialized:
            raise RuntimeError("setup_bulk must run before access")
        cfg = self.config
        if not 0 <= addr < cfg.N:
            raise IndexError(f"address {addr} out of range [0, {cfg.N})")
        if op == WRITE:
            if data is None or len(data) != cfg.block_size:
                raise ValueError(f"write needs exactly {cfg.block_size} bytes")
        elif op == MODIFY:
            if fn is None:
                raise ValueError("modify needs fn")
        elif op != READ:
            raise ValueError(f"unknown op {op!r}")
        try:
            return self._access(addr, op, data, fn)
        except IntegrityFailure:
            self.aborted = True
            raise

    def read(self, addr: int) -> Optional[bytes]:
        return self.access(addr, READ)

    def write(self, addr: int, data: bytes) -> Optional[bytes]:
        return self.access(addr, WRITE, data)

    def modify(self, addr: int, fn) -> Optional[bytes]:
        return self.access(addr, MODIFY, fn=fn)

    # ------------------------------------------------------------------ protocol
    def _access(self, a, op, data, fn=None):
        leaf, lvl, slot = self.pm_leaf[a], self.pm_lvl[a], self.pm_slot[a]
        self.pm_leaf[a] = next(self._leaves)
        self.pm_lvl[a] = NONE
        self.pm_slot[a] = NONE
        found = self._read_path(leaf, lvl, slot, a)
        if found is None:
            found = self.stash.pop(a, None)
        result = found
        if op == WRITE:
            found = data
        elif op == MODIFY:
            found = fn(found)
            if found is not None and len(found) != self.config.block_size:
                raise ValueError(f"modify must produce {self.config.block_size} bytes")
        if found is not None:
            self.stash[a] = found
        self.G += 1
        self.stats["accesses"] += 1
        if self.G % self.config.A == 0:
            self._evict_path()
        self._early_reshuffle(leaf)
        ns = len(self.stash)
        if ns > self.stats["max_stash"]:
            self.stats["max_stash"] = ns
        if ns > self.stash_limit:
            raise StashOverflow(f"stash holds {ns} blocks (limit {self.stash_limit})")
        return result

    def _get_offset(self, b: int, j: int) -> int:
        """Physical offset for logical slot ``j`` (or the next dummy when j is NONE)."""
        if j == NONE:
            dm = self.dummy[b]
            if dm >= self.config.S:
                raise AssertionError(f"dummy slots exhausted in bucket {b}")
            k = self.ptrs[b][self.config.Z + dm]
            self.dummy[b] = dm + 1
        else:
            k = self.ptrs[b][j]
        self.count[b] += 1
        self.valid[b][k] = 0
        return k

    def _read_path(self, leaf, lvl, slot, a):
        store, key, cfg = self.store, self.key, self.config
        baseline = self.variant is Variant.RING_BASELINE
        found = None
        for i in range(cfg.L + 1):
            b = self._offsets[i] + leaf // self._div[i]
            hit = i == lvl
            if self.leaky and not hit:
                continue
            if baseline:
                store.read_meta(b, self.meta_bytes, Cause.ACCESS)
            k = self._get_offset(b, slot if hit else NONE)
            ct = store.read_slot(b, k, Cause.ACCESS)
            payload = key.open(b, k, self.ver[b], ct)
            if hit:
                if payload.addr != a:
                    raise IntegrityFailure(f"bucket {b} slot {k} holds {payload.addr}, expected {a}")
                self.real_addr[b][slot] = NONE
                found = payload.data
            elif not payload.is_dummy:
                raise IntegrityFailure(f"dummy read at bucket {b} slot {k} returned a real block")
        return found

    def _read_bucket_into_stash(self, b: int, cause: int) -> None:
        """Pull the live real blocks of bucket ``b`` into the stash."""
        cfg, key = self.config, self.key
        ver, ptrs, valid, raddr = self.ver[b], self.ptrs[b], self.valid[b], self.real_addr[b]
        if self.variant is Variant.FULL_BUCKET_READS:
            cts = self.store.read_bucket(b, cause)
            payloads = key.open_bucket(b, ver, cts)
            live = {ptrs[j]: raddr[j] for j in range(cfg.Z) if raddr[j] != NONE}
            for k, (pa, pdata) in enumerate(payloads):
                want = live.get(k)
                if want is not None:
                    if pa != want:
                        raise IntegrityFailure(f"bucket {b} slot {k}: address mismatch")
                    self._to_stash(pa, pdata)
                elif valid[k] and pa != DUMMY_ADDR:
                    # a never-read slot outside the live set must still hold a dummy
                    raise IntegrityFailure(f"bucket {b} slot {k}: unexpected real block")
        else:
            # RingORAM-style: read exactly Z valid slots, live real blocks first
            picks = [j for j in range(cfg.Z) if raddr[j] != NONE and valid[ptrs[j]]]
            live = set(picks)
            for j in range(cfg.slots_per_bucket):
                if len(picks) >= cfg.Z:
                    break
                if j not in live and valid[ptrs[j]]:
                    picks.append(j)
            for j in picks:
                k = ptrs[j]
                p = key.open(b, k, ver, self.store.read_slot(b, k, cause))
                if j in live:
                    if p.addr != raddr[j]:
                        raise IntegrityFailure(f"bucket {b} slot {k}: address mismatch")
                    self._to_stash(p.addr, p.data)
                elif not p.is_dummy:
                    raise IntegrityFailure(f"bucket {b} slot {k}: unexpected real block")

    def _to_stash(self, a: int, data: bytes) -> None:
        self.stash[a] = data
        self.pm_lvl[a] = NONE
        self.pm_slot[a] = NONE

    def _select(self, path_leaf: int, levels: list[int]) -> dict[int, list[int]]:
        """Greedy assignment of stash blocks to the given path levels (deepest first).

        Blocks are ordered by (deepest reachable level on this path desc, address asc);
        at level i the still-unplaced blocks reaching depth >= i form a prefix of that order.
        """
        cfg = self.config
        div, pm_leaf = self._div, self.pm_leaf
        keyed = []
        for a in self.stash:
            lf = pm_leaf[a]
            dep = 0
            for i in range(cfg.L, 0, -1):
                if lf // div[i] == path_leaf // div[i]:
                    dep = i
                    break
            keyed.append((-dep, a))
        keyed.sort()
        out: dict[int, list[int]] = {}
        p = 0
        n = len(keyed)
        for i in sorted(levels, reverse=True):
            end = p
            while end < n and -keyed[end][0] >= i:
                end += 1
            take = min(cfg.Z, end - p)
            out[i] = [keyed[t][1] for t in range(p, p + take)]
            p += take
        return out

    def _write_path(self, path_leaf: int, levels: list[int], cause: int) -> None:
        chosen = self._select(path_leaf, levels)
        for i in sorted(levels, reverse=True):
            b = self._offsets[i] + path_leaf // self._div[i]
            content = [(a, self.stash.pop(a)) for a in chosen[i]]
            for j, (a, _) in enumerate(content):
                self.pm_lvl[a] = i
                self.pm_slot[a] = j
            self._seal_bucket(b, content, cause)

    def _seal_bucket(self, b: int, content: list[tuple[int, bytes]], cause: int) -> None:
        cfg, key = self.config, self.key
        slots = cfg.slots_per_bucket
        perm = self._perm_rng.permutation(slots).tolist()
        ver = self.ver[b] + 1
        self.ver[b] = ver
        cts: list = [None] * slots
        raddr = [NONE] * cfg.Z
        for j, (a, data) in enumerate(content):
            k = perm[j]
            cts[k] = key.seal(b, k, ver, a, data)
            raddr[j] = a
        rest = perm[len(content):]
        for k, ct in zip(rest, key.seal_dummies(b, ver, rest)):
            cts[k] = ct
        self.store.write_bucket(b, cts, cause)
        self.ptrs[b] = perm
        self.valid[b] = bytearray(b"\x01" * slots)
        self.real_addr[b] = raddr
        self.dummy[b] = 0
        self.count[b] = 0

    def _evict_path(self) -> None:
        cfg = self.config
        ordinal = self.G // cfg.A
        leaf = eviction_leaf(ordinal, cfg.d, cfg.L)
        self.eviction_log.append(leaf)
        for i in range(cfg.L + 1):
            self._read_bucket_into_stash(self._offsets[i] + leaf // self._div[i], Cause.EVICT)
        self._write_path(leaf, list(range(cfg.L + 1)), Cause.EVICT)
        self.stats["evictions"] += 1

    def _early_reshuffle(self, leaf: int) -> None:
        cfg = self.config
        for i in range(cfg.L + 1):
            b = self._offsets[i] + leaf // self._div[i]
            if self.count[b] >= cfg.S:
                self._read_bucket_into_stash(b, Cause.RESHUFFLE)
                self._write_path(leaf, [i], Cause.RESHUFFLE)
                self.stats["reshuffles"] += 1

    # ------------------------------------------------------------------ introspection (debug only)
    def _require_debug(self):
        if not self.debug:
            raise DebugDisabled("introspection needs debug=True")

    def stash_size(self) -> int:
        self._require_debug()
        return len(self.stash)

    def bucket_meta(self, b: int) -> dict:
        self._require_debug()
        return {"ver": self.ver[b], "ptrs": list(self.ptrs[b]), "valid": bytes(self.valid[b]),
                "dummy": self.dummy[b], "count": self.count[b], "real_addr": list(self.real_addr[b])}

    def locate(self, addr: int) -> tuple[int, int, int]:
        """(leaf, level, logical slot) from the position map; level/slot are -1 when stashed."""
        self._require_debug()
        return self.pm_leaf[addr], self.pm_lvl[addr], self.pm_slot[addr]

    def physical_slot(self, addr: int) -> Optional[tuple[int, int]]:
        """(bucket, physical offset) currently holding ``addr``, or None if stashed."""
        self._require_debug()
        lvl = self.pm_lvl[addr]
        if lvl == NONE:
            return None
        b = self._offsets[lvl] + self.pm_leaf[addr] // self._div[lvl]
        return b, self.ptrs[b][self.pm_slot[addr]]

    def check_invariants(self) -> None:
        """Path invariant plus metadata consistency; raises AssertionError on violation."""
        self._require_debug()
        cfg = self.config
        seen = set()
        for b in range(cfg.bucket_count):
            p = self.ptrs[b]
            assert sorted(p) == list(range(cfg.slots_per_bucket)), f"ptrs of bucket {b} not a permutation"
            assert 0 <= self.dummy[b] <= self.count[b] <= cfg.S, f"bucket {b} counters out of range"
        for a in range(cfg.N):
            lvl, slot = self.pm_lvl[a], self.pm_slot[a]
            assert (lvl == NONE) == (slot == NONE)
            if lvl != NONE:
                assert a not in self.stash, f"block {a} both placed and stashed"
                b = self._offsets[lvl] + self.pm_leaf[a] // self._div[lvl]
                assert self.real_addr[b][slot] == a, f"block {a} not at bucket {b} slot {slot}"
                assert self.valid[b][self.ptrs[b][slot]], f"block {a} slot marked invalid"
                seen.add(a)
        for b in range(cfg.bucket_count):
            for a in self.real_addr[b]:
                if a != NONE:
                    assert a in seen, f"bucket {b} lists {a} but the position map disagrees"
