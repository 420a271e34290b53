"""Oblivious ANN engine: two ORAM instances plus trusted in-memory hints.

Search runs three phases with query-independent access counts:

1. traversal: beam search guided by the in-memory traversal hints, fetching
   exactly ``L_cand`` traversal blocks (adjacency + pruning hint) through the
   traversal ORAM, padded with dummy reads if the frontier runs dry;
2. pruning: re-rank the fetched nodes by their pruning hints and keep
   ``L_prune`` of them, no storage access;
3. refinement: fetch the full vectors of the survivors through the refinement
   ORAM (padded to ``L_prune``) and re-rank exactly.
"""
from __future__ import annotations

import bisect
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import kernels
from ..blockstore import Cause, FileBlockStore, IoKind, StoreGeometry
from ..graph.packing import (PackedIndex, adjacency_bytes, decode_refinement, decode_traversal, encode_refinement,
                             encode_traversal)
from ..oram import OramAborted, OramConfig, TreeOram, Variant, plan
from ..oram.persist import dump_state, parse_state
from ..pq import PqCodebook
from ..sealing import IntegrityFailure, SealKey
from .accounting import bandwidth_ratio, coupled_bytes
from .devices import BlockDevice, OramDevice, PassThroughDevice


class EngineError(RuntimeError):
    pass


class EngineAborted(EngineError):
    pass


@dataclass(frozen=True)
class SearchParams:
    K: int = 10
    L_cand: int = 128
    L_prune: int = 32
    W: int = 4

    def __post_init__(self):
        if not (1 <= self.K <= self.L_prune <= self.L_cand):
            raise ValueError(f"need 1 <= K <= L_prune <= L_cand, got {self}")
        if self.W < 1:
            raise ValueError("beam width W must be >= 1")


@dataclass(frozen=True)
class StorageParams:
    """ORAM/backing-store settings shared by both instances."""
    d: int = 8
    Z: int = 256
    reshuffle_rate: float = 1e-3
    variant: str = Variant.FULL_BUCKET_READS.value
    backend: str = "oram"              # "oram" or "plain" (pass-through, no obliviousness)
    store: str = "memory"              # "memory" or "file"
    store_dir: Optional[str] = None
    insert_capacity: int = 0
    seed: int = 0
    leaky: bool = False                # negative-control mode, never for real use
    debug: bool = False


@dataclass(frozen=True)
class UpdateParams:
    build_list_size: int = 128
    alpha: float = 1.01
    consolidate_fraction: float = 0.05


@dataclass
class SearchStats:
    visited: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    dummy_traversal: int = 0
    dummy_refinement: int = 0


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


class Engine:
    def __init__(self, traversal: BlockDevice, refinement: BlockDevice, *, max_degree: int, hint_bytes: int,
                 dims: int, start: int, node_capacity: int, traversal_codebook: PqCodebook,
                 traversal_codes: np.ndarray, pruning_codebook: Optional[PqCodebook], search: SearchParams,
                 storage: StorageParams, update: UpdateParams, live: np.ndarray):
        self.trav = traversal
        self.refine = refinement
        self.max_degree = max_degree
        self.hint_bytes = hint_bytes
        self.dims = dims
        self.start = start
        self.node_capacity = node_capacity
        self.dummy_addr = node_capacity          # reserved, preloaded at setup
        self.cb_t = traversal_codebook
        self.codes_t = traversal_codes
        self.cb_p = pruning_codebook
        self.params = search
        self.storage = storage
        self.update = update
        self.live = live
        self.deleted: set[int] = set()
        self.aborted = False
        self.last = SearchStats()
        self.queries = 0
        self.op_log: Optional[list] = None

    # ------------------------------------------------------------------ construction
    @classmethod
    def setup(cls, packed: PackedIndex, traversal_codebook: PqCodebook, pruning_codebook: Optional[PqCodebook],
              search: SearchParams | None = None, storage: StorageParams | None = None,
              update: UpdateParams | None = None, traversal_codes: Optional[np.ndarray] = None) -> "Engine":
        search = search or SearchParams()
        storage = storage or StorageParams()
        update = update or UpdateParams()
        if packed.n == 0:
            raise EngineError("cannot set up an empty index")
        if pruning_codebook is not None and pruning_codebook.code_bytes != packed.hint_bytes:
            raise EngineError("pruning codebook size differs from the packed hint size")
        if pruning_codebook is None and packed.hint_bytes != 0:
            raise EngineError("packed index carries pruning hints but no codebook was given")
        if traversal_codebook.dims != packed.dims:
            raise EngineError("traversal codebook dimensionality differs from the index")
        if packed.refinement_block_size != 4 * packed.dims:
            raise EngineError("refinement block size does not match 4 * dims")
        n = packed.n
        node_cap = n + storage.insert_capacity
        N = node_cap + 1
        tbs, rbs = packed.traversal_block_size, packed.refinement_block_size
        vecs = packed.vectors()
        codes = np.zeros((node_cap, traversal_codebook.m), dtype=np.uint8)
        codes[:n] = traversal_codebook.encode(vecs) if traversal_codes is None else traversal_codes
        live = np.zeros(node_cap, dtype=bool)
        live[:n] = True

        t_blocks = {p: packed.traversal_block(p) for p in range(n)}
        r_blocks = {p: packed.refinement_block(p) for p in range(n)}
        t_blocks[node_cap] = bytes(tbs)
        r_blocks[node_cap] = bytes(rbs)
        if storage.backend == "plain":
            trav: BlockDevice = PassThroughDevice("traversal", tbs, N)
            ref: BlockDevice = PassThroughDevice("refinement", rbs, N)
        elif storage.backend == "oram":
            s_t, s_r, k_t, k_r = _child_seeds(storage.seed, 4)
            trav = OramDevice("traversal", _make_oram(N, tbs, storage, s_t, k_t, b"traversal", "traversal"))
            ref = OramDevice("refinement", _make_oram(N, rbs, storage, s_r, k_r, b"refinement", "refinement"))
        else:
            raise EngineError(f"unknown backend {storage.backend!r}")
        trav.load(t_blocks)
        ref.load(r_blocks)
        return cls(trav, ref, max_degree=packed.max_degree, hint_bytes=packed.hint_bytes, dims=packed.dims,
                   start=packed.start, node_capacity=node_cap, traversal_codebook=traversal_codebook,
                   traversal_codes=codes, pruning_codebook=pruning_codebook, search=search, storage=storage,
                   update=update, live=live)

    # ------------------------------------------------------------------ helpers
    @property
    def traversal_block_size(self) -> int:
        return self.trav.block_size

    @property
    def refinement_block_size(self) -> int:
        return self.refine.block_size

    def _guard(self):
        if self.aborted:
            raise EngineAborted("engine aborted after a storage integrity failure")

    def _run(self, fn, *a, **kw):
        self._guard()
        try:
            return fn(*a, **kw)
        except (IntegrityFailure, OramAborted) as exc:
            self.aborted = True
            raise EngineAborted(str(exc)) from exc

    def _log(self, dev: BlockDevice):
        if self.op_log is not None:
            self.op_log.append((dev.name, dev.block_size))

    def _read(self, dev: BlockDevice, addr: int):
        self._log(dev)
        return dev.read(addr)

    def _write(self, dev: BlockDevice, addr: int, data: bytes):
        self._log(dev)
        dev.write(addr, data)

    def _traversal_dists(self, q) -> np.ndarray:
        table = self.cb_t.adc_table(q)
        return kernels.adc_distances(table, self.codes_t)

    def _traverse(self, q, budget: int, W: int):
        """Phase 1. Returns (visited ids in fetch order, {id: (nbrs, code, tomb)}, dummy count)."""
        dt = self._traversal_dists(q)
        s = self.start
        cand = [(float(dt[s]), s)]
        seen = {s}
        visited: list[int] = []
        vis: set[int] = set()
        blocks: dict[int, tuple] = {}
        fetched = 0
        dummies = 0
        R, hb = self.max_degree, self.hint_bytes
        while fetched < budget:
            picks = []
            room = min(W, budget - fetched)
            for _, p in cand:
                if p not in vis:
                    picks.append(p)
                    if len(picks) == room:
                        break
            if not picks:
                for _ in range(budget - fetched):
                    self._read(self.trav, self.dummy_addr)
                dummies += budget - fetched
                break
            raw = [self._read(self.trav, p) for p in picks]
            fetched += len(picks)
            for p, blk in zip(picks, raw):
                vis.add(p)
                visited.append(p)
                if blk is None:
                    blocks[p] = (np.zeros(0, dtype=np.int64), bytes(hb), True)
                    continue
                nbrs, code, tomb = decode_traversal(blk, R, hb)
                blocks[p] = (nbrs, code, tomb)
            for p in picks:
                for nb in blocks[p][0].tolist():
                    if nb not in seen and 0 <= nb < self.node_capacity:
                        seen.add(nb)
                        bisect.insort(cand, (float(dt[nb]), nb))
            del cand[budget:]
        return visited, blocks, dummies

    def _prune_rank(self, q, ids: list[int], blocks: dict) -> list[int]:
        if not ids:
            return []
        idarr = np.array(ids, dtype=np.int64)
        if self.cb_p is None:
            d = np.zeros(idarr.size)
        else:
            codes = np.frombuffer(b"".join(blocks[p][1] for p in ids), dtype=np.uint8).reshape(len(ids), -1)
            d = kernels.adc_distances(self.cb_p.adc_table(q), codes)
        order = np.lexsort((idarr, d))
        return idarr[order].tolist()

    # ------------------------------------------------------------------ search
    def search(self, q, K: Optional[int] = None) -> np.ndarray:
        return self._run(self._search, q, K)

    def _search(self, q, K):
        prm = self.params
        if K is not None and K != prm.K:
            raise EngineError(f"K is fixed at configuration time ({prm.K})")
        q = np.asarray(q, dtype=np.float32)
        if q.shape != (self.dims,):
            raise EngineError(f"query must have shape ({self.dims},)")
        visited, blocks, dummies = self._traverse(q, prm.L_cand, prm.W)
        keep = [p for p in visited if not blocks[p][2] and p not in self.deleted and self.live[p]]
        pruned = self._prune_rank(q, keep, blocks)[:prm.L_prune]
        vecs = []
        for p in pruned:
            vecs.append(decode_refinement(self._read(self.refine, p)))
        pad = prm.L_prune - len(pruned)
        for _ in range(pad):
            self._read(self.refine, self.dummy_addr)
        out = np.full(prm.K, -1, dtype=np.int64)
        if pruned:
            ids = np.array(pruned, dtype=np.int64)
            d = kernels.sq_dists_to(np.ascontiguousarray(np.stack(vecs)), q)
            order = np.lexsort((ids, d))[:prm.K]
            out[:order.size] = ids[order]
        self.last = SearchStats(visited, pruned, dummies, pad)
        self.queries += 1
        return out

    # ------------------------------------------------------------------ updates
    def _approx(self, ids, blocks) -> np.ndarray:
        """Trusted-side approximate vectors: pruning-hint decode when fetched, else traversal hint."""
        out = np.empty((len(ids), self.dims), dtype=np.float32)
        for r, p in enumerate(ids):
            if self.cb_p is not None and p in blocks:
                out[r] = self.cb_p.decode(np.frombuffer(blocks[p][1], dtype=np.uint8))[0]
            else:
                out[r] = self.cb_t.decode(self.codes_t[p])[0]
        return out

    def _prune_around(self, center: np.ndarray, ids: list[int], vecs: np.ndarray, extra=None) -> list[int]:
        """robust_prune over approximate vectors; ``extra`` = (id, exact vector) appended to the pool."""
        ids = list(ids)
        vecs = np.asarray(vecs, dtype=np.float32).reshape(len(ids), self.dims)
        if extra is not None:
            ids.append(extra[0])
            vecs = np.vstack([vecs, np.asarray(extra[1], dtype=np.float32)[None, :]])
        if not ids:
            return []
        # local index order must follow global id order so distance ties resolve by id
        perm = np.argsort(np.array(ids, dtype=np.int64), kind="stable")
        ids = [ids[i] for i in perm.tolist()]
        vecs = vecs[perm]
        center = np.asarray(center, dtype=np.float32)
        local = np.arange(len(ids), dtype=np.int64)
        d = kernels.sq_dists_to(np.ascontiguousarray(vecs), center)
        kept = kernels.robust_prune(np.ascontiguousarray(vecs), center, local, d, float(self.update.alpha),
                                    int(self.max_degree))
        return [ids[i] for i in kept.tolist()]

    def insert(self, p: int, x) -> None:
        self._run(self._insert, p, x)

    def _insert(self, p, x):
        p = int(p)
        if not 0 <= p < self.node_capacity:
            raise EngineError(f"key {p} outside capacity {self.node_capacity}")
        if self.live[p] or p in self.deleted:
            raise EngineError(f"key {p} is already in use")
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (self.dims,):
            raise EngineError(f"vector must have shape ({self.dims},)")
        R = self.max_degree
        Lb = self.update.build_list_size
        visited, blocks, _ = self._traverse(x, Lb, self.params.W)
        cands = [v for v in visited if not blocks[v][2] and self.live[v] and v not in self.deleted]
        nbrs = self._prune_around(x, cands, self._approx(cands, blocks)) if cands else []

        # refinement: exact vectors of the new neighbors (padded), then the new vector itself
        exact = {}
        for j in nbrs:
            exact[j] = decode_refinement(self._read(self.refine, j))
        for _ in range(R - len(nbrs)):
            self._read(self.refine, self.dummy_addr)
        self._write(self.refine, p, encode_refinement(x))

        code_p = bytes(self.cb_p.encode(x)[0]) if self.cb_p is not None else b""
        tbs = self.trav.block_size
        self._write(self.trav, p, encode_traversal(nbrs, code_p, R, tbs))
        for j in nbrs:
            cur = [c for c in blocks[j][0].tolist() if c != p]
            if len(cur) < R:
                new = cur + [p]
            else:
                pool = [c for c in cur if c not in self.deleted]
                new = self._prune_around(exact[j], pool, self._approx(pool, blocks), extra=(p, x))
            self._write(self.trav, j, encode_traversal(new, blocks[j][1], R, tbs))
        for _ in range(R - len(nbrs)):
            self._read(self.trav, self.dummy_addr)
        self.codes_t[p] = self.cb_t.encode(x)[0]
        self.live[p] = True

    def delete(self, p: int) -> None:
        self._run(self._delete, p)

    def _delete(self, p):
        p = int(p)
        if not (0 <= p < self.node_capacity) or not self.live[p] or p in self.deleted:
            raise EngineError(f"key {p} is not live")
        R, hb, tbs = self.max_degree, self.hint_bytes, self.trav.block_size

        def tombstone(old):
            nbrs, code, _ = decode_traversal(old, R, hb)
            return encode_traversal(nbrs, code, R, tbs, tombstone=True)

        self._log(self.trav)
        self.trav.modify(p, tombstone)
        self.deleted.add(p)

    def needs_consolidation(self) -> bool:
        live = int(self.live.sum()) - len(self.deleted)
        return len(self.deleted) >= self.update.consolidate_fraction * max(live, 1)

    def consolidate(self) -> int:
        return self._run(self._consolidate)

    def _consolidate(self):
        """Two full passes over the traversal ORAM (read all, then write all), so the cost only depends on capacity."""
        R, hb, tbs = self.max_degree, self.hint_bytes, self.trav.block_size
        cap = self.node_capacity
        blocks = {}
        for a in range(cap):
            raw = self._read(self.trav, a)
            if raw is not None:
                blocks[a] = decode_traversal(raw, R, hb)
        dead = set(self.deleted)
        repaired = 0
        out: dict[int, bytes] = {}
        for a in range(cap):
            if a in dead or a not in blocks or not self.live[a]:
                out[a] = bytes(tbs)
                continue
            nbrs, code, _ = blocks[a]
            nl = nbrs.tolist()
            if not any(n in dead for n in nl):
                out[a] = encode_traversal(nl, code, R, tbs)
                continue
            cand = {n for n in nl if n not in dead}
            for n in nl:
                if n in dead:
                    cand.update(r for r in blocks[n][0].tolist() if r not in dead and r != a)
            cand.discard(a)
            pool = sorted(cand)
            center = self._approx([a], blocks)[0]
            new = self._prune_around(center, pool, self._approx(pool, blocks))
            out[a] = encode_traversal(new, code, R, tbs)
            repaired += 1
        for a in range(cap):
            self._write(self.trav, a, out[a])
        for a in dead:
            self.live[a] = False
            self.codes_t[a] = 0
        self.deleted.clear()
        if not self.live[self.start]:
            live = np.nonzero(self.live)[0]
            approx = self._approx(live.tolist(), {})
            mean = approx.astype(np.float64).mean(axis=0)
            self.start = int(live[int(np.argmin(kernels.sq_dists_to(approx, mean)))])
        return repaired

    # ------------------------------------------------------------------ accounting
    def reset_io(self) -> None:
        for dev in (self.trav, self.refine):
            dev.accesses = 0
            if isinstance(dev, OramDevice):
                dev.store.trace_reset()
        self.queries = 0

    def io_report(self) -> dict:
        prm = self.params
        nb = adjacency_bytes(self.max_degree)
        fb = self.refinement_block_size
        rep = {
            "queries": self.queries,
            "traversal_accesses": self.trav.accesses,
            "refinement_accesses": self.refine.accesses,
            "traversal_block_bytes": self.traversal_block_size,
            "refinement_block_bytes": fb,
            "adjacency_bytes": nb,
            "hint_bytes": self.hint_bytes,
            "ann_traversal_bytes": self.trav.bytes_moved,
            "ann_refinement_bytes": self.refine.bytes_moved,
        }
        rep["ann_bytes"] = rep["ann_traversal_bytes"] + rep["ann_refinement_bytes"]
        rep["coupled_equivalent_bytes"] = coupled_bytes(prm.L_cand, nb, fb) * self.queries
        rep["measured_ratio"] = rep["coupled_equivalent_bytes"] / rep["ann_bytes"] if rep["ann_bytes"] else float("nan")
        rep["closed_form_ratio"] = bandwidth_ratio(nb, self.traversal_block_size - nb, fb, prm.L_prune / prm.L_cand)
        for dev, tag in ((self.trav, "traversal"), (self.refine, "refinement")):
            if isinstance(dev, OramDevice):
                tr = dev.store.trace_snapshot()
                meta = tr.kinds == IoKind.READ_META
                rep[f"oram_{tag}_requests"] = tr.request_count
                rep[f"oram_{tag}_bytes"] = int(tr.nbytes[~meta].sum())
                rep[f"oram_{tag}_reshuffle_requests"] = int((tr.causes == Cause.RESHUFFLE).sum())
        return rep

    # ------------------------------------------------------------------ persistence
    def save(self, directory: str | os.PathLike) -> None:
        if not isinstance(self.trav, OramDevice):
            raise EngineError("only ORAM-backed engines can be persisted")
        d = os.fspath(directory)
        os.makedirs(d, exist_ok=True)
        meta = {
            "version": 1, "max_degree": self.max_degree, "hint_bytes": self.hint_bytes, "dims": self.dims,
            "start": self.start, "node_capacity": self.node_capacity, "search": asdict(self.params),
            "storage": asdict(self.storage), "update": asdict(self.update),
            "live": np.nonzero(self.live)[0].tolist(), "deleted": sorted(self.deleted),
        }
        with open(os.path.join(d, "engine.json"), "w") as fh:
            json.dump(meta, fh, indent=1)
        with open(os.path.join(d, "traversal_hints.pq"), "wb") as fh:
            fh.write(self.cb_t.to_bytes())
        if self.cb_p is not None:
            with open(os.path.join(d, "pruning_hints.pq"), "wb") as fh:
                fh.write(self.cb_p.to_bytes())
        np.save(os.path.join(d, "traversal_codes.npy"), self.codes_t)
        for dev in (self.trav, self.refine):
            oram = dev.oram
            with open(os.path.join(d, f"{dev.name}.state"), "wb") as fh:
                fh.write(dump_state(oram))
            with open(os.path.join(d, f"{dev.name}.key"), "wb") as fh:
                fh.write(oram.key.export())
            st = oram.store
            img = os.path.join(d, f"{dev.name}.img")
            if isinstance(st, FileBlockStore):
                if os.path.abspath(st.path) != os.path.abspath(img):
                    with open(img, "wb") as fh:
                        for b in range(st.geometry.bucket_count):
                            fh.write(b"".join(st.peek_slot(b, k) for k in range(st.geometry.slots_per_bucket)))
            else:
                with open(img, "wb") as fh:
                    for b in range(st.geometry.bucket_count):
                        fh.write(b"".join(st._get_bucket(b)))

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "Engine":
        d = os.fspath(directory)
        with open(os.path.join(d, "engine.json")) as fh:
            meta = json.load(fh)
        with open(os.path.join(d, "traversal_hints.pq"), "rb") as fh:
            cb_t = PqCodebook.from_bytes(fh.read())
        cb_p = None
        if os.path.exists(os.path.join(d, "pruning_hints.pq")):
            with open(os.path.join(d, "pruning_hints.pq"), "rb") as fh:
                cb_p = PqCodebook.from_bytes(fh.read())
        storage = StorageParams(**meta["storage"])
        devs = []
        for name in ("traversal", "refinement"):
            with open(os.path.join(d, f"{name}.state"), "rb") as fh:
                raw = fh.read()
            cfg = _config_from_state(raw)
            with open(os.path.join(d, f"{name}.key"), "rb") as fh:
                key = SealKey.restore(cfg.block_size, fh.read())
            geom = StoreGeometry(cfg.bucket_count, cfg.slots_per_bucket, key.slot_bytes)
            store = FileBlockStore(geom, os.path.join(d, f"{name}.img"), create=False)
            devs.append(OramDevice(name, parse_state(raw, store, key, debug=storage.debug, leaky=storage.leaky)))
        live = np.zeros(meta["node_capacity"], dtype=bool)
        live[meta["live"]] = True
        eng = cls(devs[0], devs[1], max_degree=meta["max_degree"], hint_bytes=meta["hint_bytes"], dims=meta["dims"],
                  start=meta["start"], node_capacity=meta["node_capacity"], traversal_codebook=cb_t,
                  traversal_codes=np.load(os.path.join(d, "traversal_codes.npy")), pruning_codebook=cb_p,
                  search=SearchParams(**meta["search"]), storage=storage, update=UpdateParams(**meta["update"]),
                  live=live)
        eng.deleted = set(meta["deleted"])
        return eng


def _config_from_state(raw: bytes) -> OramConfig:
    d, L, Z, S, A, N, bs = struct.unpack_from("<7q", raw, 12)
    return OramConfig(d=d, L=L, Z=Z, S=S, A=A, N=N, block_size=bs)


def _make_oram(N: int, block_size: int, storage: StorageParams, seed: int, key_seed: int, label: bytes,
               name: str) -> TreeOram:
    cfg = plan(N, block_size, storage.d, storage.Z, storage.reshuffle_rate)
    key = SealKey(block_size, seed=key_seed, label=label)
    store = None
    if storage.store == "file":
        if not storage.store_dir:
            raise EngineError("file store needs store_dir")
        os.makedirs(storage.store_dir, exist_ok=True)
        geom = StoreGeometry(cfg.bucket_count, cfg.slots_per_bucket, key.slot_bytes)
        store = FileBlockStore(geom, os.path.join(storage.store_dir, f"{name}.img"))
    return TreeOram(cfg, store=store, key=key, seed=seed, variant=storage.variant, debug=storage.debug,
                    leaky=storage.leaky)
