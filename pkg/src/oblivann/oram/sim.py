"""Metadata-only simulation of the tree ORAM (no payloads, no crypto, no I/O).

Placement, eviction order, dummy counting and early reshuffles mirror
:class:`~oblivann.oram.client.TreeOram` exactly, so with the same leaf sequence
the simulator and the real client end every access with the same stash.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._accel import jit
from .params import OramConfig

INFINITE = -1


@jit
def _ll_insert(x, h, head, nxt, prv, size, loc):
    first = head[h]
    nxt[x] = first
    prv[x] = -1
    if first != -1:
        prv[first] = x
    head[h] = x
    size[h] += 1
    loc[x] = h


@jit
def _ll_remove(x, head, nxt, prv, size, loc):
    h = loc[x]
    p = prv[x]
    n = nxt[x]
    if p != -1:
        nxt[p] = n
    else:
        head[h] = n
    if n != -1:
        prv[n] = p
    size[h] -= 1
    loc[x] = -1


@jit
def _flush_area(b, t, load_now, last_t, area, batch):
    if batch >= 0:
        area[batch, b] += load_now * (t - last_t[b])
    last_t[b] = t


@jit
def _write_levels(path_leaf, lo, hi, L, Z, N, offsets, div, pm_leaf, head, nxt, prv, size, loc,
                  stash_id, t, last_t, area, batch, wt_sum, wt_sq, wt_n, record_wt):
    """Greedy write-back of stash blocks into path levels hi..lo (deepest first)."""
    ns = size[stash_id]
    keys = np.empty(ns, dtype=np.int64)
    addrs = np.empty(ns, dtype=np.int64)
    deps = np.empty(ns, dtype=np.int64)
    x = head[stash_id]
    c = 0
    while x != -1:
        lf = pm_leaf[x]
        dep = 0
        for i in range(L, 0, -1):
            if lf // div[i] == path_leaf // div[i]:
                dep = i
                break
        addrs[c] = x
        deps[c] = dep
        keys[c] = (L - dep) * N + x
        c += 1
        x = nxt[x]
    order = np.argsort(keys, kind="mergesort")
    p = 0
    for i in range(hi, lo - 1, -1):
        b = offsets[i] + path_leaf // div[i]
        end = p
        while end < ns and deps[order[end]] >= i:
            end += 1
        take = end - p
        if Z != -1 and take > Z:
            take = Z
        _flush_area(b, t, size[b], last_t, area, batch)
        for r in range(p, p + take):
            a = addrs[order[r]]
            _ll_remove(a, head, nxt, prv, size, loc)
            _ll_insert(a, b, head, nxt, prv, size, loc)
        p += take
        if record_wt and i < L:
            wt_sum[b] += size[b]
            wt_sq[b] += size[b] * size[b]
            wt_n[b] += 1


@jit
def _run(d, L, Z, S, A, N, leaves, addrs, burn_in, n_batches, hist_cap):
    nb = (d ** (L + 1) - 1) // (d - 1)
    stash_id = nb
    offsets = np.empty(L + 1, dtype=np.int64)
    div = np.empty(L + 1, dtype=np.int64)
    for i in range(L + 1):
        offsets[i] = (d ** i - 1) // (d - 1)
        div[i] = d ** (L - i)
    head = np.full(nb + 1, -1, dtype=np.int64)
    size = np.zeros(nb + 1, dtype=np.int64)
    nxt = np.full(N, -1, dtype=np.int64)
    prv = np.full(N, -1, dtype=np.int64)
    loc = np.full(N, -1, dtype=np.int64)
    pm_leaf = np.empty(N, dtype=np.int64)
    count = np.zeros(nb, dtype=np.int64)

    T = addrs.shape[0]
    measured = T - burn_in
    if measured < 0:
        measured = 0
    batch_len = measured // n_batches if n_batches > 0 else 0
    area = np.zeros((max(n_batches, 1), nb), dtype=np.float64)
    last_t = np.zeros(nb, dtype=np.int64)
    wt_sum = np.zeros(nb, dtype=np.float64)
    wt_sq = np.zeros(nb, dtype=np.float64)
    wt_n = np.zeros(nb, dtype=np.int64)
    n_evict = T // A
    stash_evict = np.zeros(n_evict, dtype=np.int64)
    hist_access = np.zeros(hist_cap + 1, dtype=np.int64)
    reshuffles = 0
    reshuffle_events = np.zeros(L + 1, dtype=np.int64)

    # setup: address order, deepest bucket with room, else stash
    for a in range(N):
        lf = leaves[a]
        pm_leaf[a] = lf
        placed = False
        for i in range(L, -1, -1):
            b = offsets[i] + lf // div[i]
            if Z == -1 or size[b] < Z:
                _ll_insert(a, b, head, nxt, prv, size, loc)
                placed = True
                break
        if not placed:
            _ll_insert(a, stash_id, head, nxt, prv, size, loc)

    G = 0
    ev = 0
    batch = -1
    for t in range(T):
        if t >= burn_in and batch_len > 0:
            nbatch = (t - burn_in) // batch_len
            if nbatch >= n_batches:
                nbatch = n_batches - 1
            if nbatch != batch:
                for b in range(nb):
                    _flush_area(b, t, size[b], last_t, area, batch)
                batch = nbatch
        a = addrs[t]
        lf = pm_leaf[a]
        for i in range(L + 1):
            count[offsets[i] + lf // div[i]] += 1
        h = loc[a]
        if h != stash_id:
            _flush_area(h, t, size[h], last_t, area, batch)
            _ll_remove(a, head, nxt, prv, size, loc)
            _ll_insert(a, stash_id, head, nxt, prv, size, loc)
        pm_leaf[a] = leaves[N + t]
        G += 1
        record = t >= burn_in
        if G % A == 0:
            e_ord = (G // A) % (d ** L)
            el = 0
            y = e_ord
            for _ in range(L):
                el = el * d + y % d
                y //= d
            for i in range(L + 1):
                b = offsets[i] + el // div[i]
                _flush_area(b, t, size[b], last_t, area, batch)
                x = head[b]
                while x != -1:
                    nx = nxt[x]
                    _ll_remove(x, head, nxt, prv, size, loc)
                    _ll_insert(x, stash_id, head, nxt, prv, size, loc)
                    x = nx
                count[b] = 0
            _write_levels(el, 0, L, L, Z, N, offsets, div, pm_leaf, head, nxt, prv, size, loc,
                          stash_id, t, last_t, area, batch, wt_sum, wt_sq, wt_n, record)
            stash_evict[ev] = size[stash_id]
            ev += 1
        if S != -1:
            for i in range(L + 1):
                b = offsets[i] + lf // div[i]
                if count[b] >= S:
                    _flush_area(b, t, size[b], last_t, area, batch)
                    x = head[b]
                    while x != -1:
                        nx = nxt[x]
                        _ll_remove(x, head, nxt, prv, size, loc)
                        _ll_insert(x, stash_id, head, nxt, prv, size, loc)
                        x = nx
                    count[b] = 0
                    _write_levels(lf, i, i, L, Z, N, offsets, div, pm_leaf, head, nxt, prv, size, loc,
                                  stash_id, t, last_t, area, batch, wt_sum, wt_sq, wt_n, False)
                    reshuffles += 1
                    reshuffle_events[i] += 1
        s = size[stash_id]
        if s > hist_cap:
            s = hist_cap
        hist_access[s] += 1
    if batch >= 0:
        for b in range(nb):
            _flush_area(b, T, size[b], last_t, area, batch)
    return stash_evict[:ev], hist_access, reshuffles, reshuffle_events, wt_sum, wt_sq, wt_n, area, batch_len


@dataclass
class SimResult:
    config: OramConfig
    accesses: int
    infinite: bool
    stash_after_evict: np.ndarray
    stash_hist_access: np.ndarray
    reshuffles: int
    reshuffles_per_level: np.ndarray
    writetime_sum: np.ndarray
    writetime_sq: np.ndarray
    writetime_n: np.ndarray
    area: np.ndarray
    batch_len: int
    extras: dict = field(default_factory=dict)

    @property
    def evictions(self) -> int:
        return int(self.stash_after_evict.size)

    def tail(self, R: int) -> float:
        """Empirical P[stash > R] sampled right after each eviction."""
        if self.evictions == 0:
            return 0.0
        return float(np.mean(self.stash_after_evict > R))

    def tail_per_access(self, R: int) -> float:
        h = self.stash_hist_access
        tot = h.sum()
        return float(h[R + 1:].sum() / tot) if tot else 0.0

    def evict_histogram(self) -> np.ndarray:
        if self.evictions == 0:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.stash_after_evict)

    @property
    def reshuffle_rate_per_touch(self) -> float:
        touches = self.accesses * self.config.levels
        return self.reshuffles / touches if touches else 0.0

    def nonleaf_ids(self) -> np.ndarray:
        c = self.config
        return np.arange(c.level_offsets()[c.L]) if c.L > 0 else np.zeros(0, dtype=np.int64)

    def time_avg_load(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean, sigma) of each non-leaf bucket's time-averaged load, sigma by batch means."""
        ids = self.nonleaf_ids()
        if self.batch_len == 0 or ids.size == 0:
            return np.zeros(ids.size), np.zeros(ids.size)
        per_batch = self.area[:, ids] / self.batch_len
        # the last batch absorbs the remainder; normalise it by its true length
        nbt = per_batch.shape[0]
        last_len = (self.accesses - self.extras["burn_in"]) - self.batch_len * (nbt - 1)
        per_batch[-1] = self.area[-1, ids] / last_len
        mean = per_batch.mean(axis=0)
        sigma = per_batch.std(axis=0, ddof=1) / np.sqrt(nbt) if nbt > 1 else np.zeros(ids.size)
        return mean, sigma

    def write_time_load(self) -> tuple[np.ndarray, np.ndarray]:
        """(mean, standard error) of each non-leaf bucket's load right after its eviction write."""
        ids = self.nonleaf_ids()
        n = self.writetime_n[ids].astype(np.float64)
        safe = np.maximum(n, 1)
        mean = self.writetime_sum[ids] / safe
        var = np.maximum(self.writetime_sq[ids] / safe - mean ** 2, 0.0)
        return mean, np.sqrt(var * safe / np.maximum(safe - 1, 1)) / np.sqrt(safe)


def round_robin(N: int, accesses: int) -> np.ndarray:
    return np.arange(accesses, dtype=np.int64) % N


def draw_leaves(config: OramConfig, accesses: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, config.leaf_count, size=config.N + accesses, dtype=np.int64)


def simulate(config: OramConfig, accesses: int, seed=0, infinite: bool = False, addrs=None,
             leaves=None, burn_in: int | None = None, n_batches: int = 20, hist_cap: int = 4096) -> SimResult:
    """Run the metadata-only ORAM. Default workload is round-robin over all N blocks."""
    if accesses < 0:
        raise ValueError("accesses must be >= 0")
    addrs = round_robin(config.N, accesses) if addrs is None else np.asarray(addrs, dtype=np.int64)
    if leaves is None:
        leaves = draw_leaves(config, addrs.size, seed)
    leaves = np.asarray(leaves, dtype=np.int64)
    if leaves.size < config.N + addrs.size:
        raise ValueError("need N + accesses leaves")
    if burn_in is None:
        burn_in = min(2 * config.N, addrs.size // 2)
    Z = INFINITE if infinite else config.Z
    S = INFINITE if infinite else config.S
    out = _run(config.d, config.L, Z, S, config.A, config.N, leaves, addrs, int(burn_in), int(n_batches),
               int(hist_cap))
    se, ha, rs, rsl, ws, wq, wn, area, blen = out
    return SimResult(config, int(addrs.size), infinite, se, ha, int(rs), rsl, ws, wq, wn, area, int(blen),
                     extras={"burn_in": int(burn_in), "seed": seed})
