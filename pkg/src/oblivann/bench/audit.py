"""Empirical obliviousness audit: two query workloads, paired seeds, trace comparison.

For every seed the engine is set up from scratch twice (same seed), once per
workload, and the physical traces of both ORAM stores are recorded from the
first query on. Early-reshuffle events are the one permitted difference
between runs, so they are removed before the event-shape comparison and their
counts are compared as distributions instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from ..blockstore import Cause, IoKind, IoTrace
from ..engine import Engine, OramDevice
from ..oram import eviction_leaf, plan

ALPHA = 1e-3


@dataclass
class RunTrace:
    logical: list
    physical: dict                 # device name -> IoTrace
    reshuffles: int
    leaf_reads: np.ndarray         # leaf indices of access-time ReadSlot events at the leaf level
    evict_ok: bool


@dataclass
class AuditReport:
    trace_lengths_equal: bool
    event_shape_equal: bool
    reshuffle_counts_a: list
    reshuffle_counts_b: list
    reshuffle_ks_stat: float
    reshuffle_ks_pvalue: float
    leaf_chi_square: dict          # workload -> (statistic, p-value)
    eviction_schedule_ok: bool
    alpha: float = ALPHA
    mismatched_seeds: list = field(default_factory=list)

    @property
    def reshuffle_rate_a(self) -> float:
        return float(np.mean(self.reshuffle_counts_a)) if self.reshuffle_counts_a else 0.0

    @property
    def reshuffle_rate_b(self) -> float:
        return float(np.mean(self.reshuffle_counts_b)) if self.reshuffle_counts_b else 0.0

    @property
    def reshuffle_ok(self) -> bool:
        return self.reshuffle_ks_pvalue > self.alpha

    @property
    def leaf_uniform_ok(self) -> bool:
        return all(p > self.alpha for _, p in self.leaf_chi_square.values())

    @property
    def passed(self) -> bool:
        return (self.trace_lengths_equal and self.event_shape_equal and self.reshuffle_ok
                and self.leaf_uniform_ok and self.eviction_schedule_ok)

    def rows(self) -> list[tuple[str, str, bool]]:
        return [
            ("trace_lengths_equal", "", self.trace_lengths_equal),
            ("event_shape_equal", f"mismatched seeds={self.mismatched_seeds}", self.event_shape_equal),
            ("reshuffle_ks", f"D={self.reshuffle_ks_stat:.4f} p={self.reshuffle_ks_pvalue:.4g} "
                             f"mean_a={self.reshuffle_rate_a:.2f} mean_b={self.reshuffle_rate_b:.2f}",
             self.reshuffle_ok),
            ("leaf_chi_square", " ".join(f"{k}: chi2={s:.1f} p={p:.4g}" for k, (s, p) in self.leaf_chi_square.items()),
             self.leaf_uniform_ok),
            ("eviction_schedule", "", self.eviction_schedule_ok),
        ]


def _leaf_view(dev: OramDevice, tr: IoTrace, first_eviction: int) -> tuple[np.ndarray, bool]:
    cfg = dev.oram.config
    leaf0 = cfg.level_offsets()[cfg.L]
    at_leaf = tr.buckets >= leaf0
    reads = tr.buckets[at_leaf & (tr.kinds == IoKind.READ_SLOT) & (tr.causes == Cause.ACCESS)] - leaf0
    ev = tr.buckets[at_leaf & (tr.kinds == IoKind.WRITE_BUCKET) & (tr.causes == Cause.EVICT)] - leaf0
    want = [eviction_leaf(first_eviction + i, cfg.d, cfg.L) for i in range(ev.size)]
    return reads.astype(np.int64), bool(np.array_equal(ev, np.array(want, dtype=np.int64)))


def run_workload(make_engine: Callable[[int], Engine], queries, seed: int) -> RunTrace:
    eng = make_engine(seed)
    devs = [d for d in (eng.trav, eng.refine) if isinstance(d, OramDevice)]
    if len(devs) != 2:
        raise ValueError("the audit needs an ORAM-backed engine")
    firsts = {}
    for d in devs:
        d.store.trace_reset()
        firsts[d.name] = d.oram.G // d.oram.config.A + 1
    eng.op_log = []
    for q in queries:
        eng.search(q)
    phys, leaf_reads, ok, resh = {}, [], True, 0
    for d in devs:
        tr = d.store.trace_snapshot()
        phys[d.name] = tr.without(Cause.RESHUFFLE)
        resh += int((tr.causes == Cause.RESHUFFLE).sum())
        reads, good = _leaf_view(d, tr, firsts[d.name])
        ok &= good
        if d.name == "traversal":
            leaf_reads.append(reads)
    return RunTrace(eng.op_log, phys, resh, np.concatenate(leaf_reads), ok)


def _chi_square(reads: np.ndarray, leaves: int) -> tuple[float, float]:
    if reads.size == 0:
        return 0.0, 1.0
    counts = np.bincount(reads, minlength=leaves)
    res = stats.chisquare(counts)
    return float(res.statistic), float(res.pvalue)


def audit_obliviousness(make_engine: Callable[[int], Engine], queries_a: Sequence, queries_b: Sequence,
                        seeds: Sequence[int], alpha: float = ALPHA) -> AuditReport:
    """``make_engine(seed)`` must build a fresh ORAM-backed engine whose randomness depends on ``seed`` only."""
    if len(queries_a) != len(queries_b):
        raise ValueError("workloads must have the same number of queries")
    lengths_equal = shapes_equal = evict_ok = True
    mismatched = []
    counts_a, counts_b = [], []
    leaves_a, leaves_b = [], []
    leaf_count = getattr(make_engine, "leaf_count", None)
    for s in seeds:
        ra = run_workload(make_engine, queries_a, s)
        rb = run_workload(make_engine, queries_b, s)
        if ra.logical != rb.logical:
            lengths_equal = False
        for name in ra.physical:
            ta, tb = ra.physical[name], rb.physical[name]
            if len(ta) != len(tb):
                lengths_equal = False
            if not np.array_equal(ta.shape(), tb.shape()):
                shapes_equal = False
                mismatched.append(s)
        evict_ok &= ra.evict_ok and rb.evict_ok
        counts_a.append(ra.reshuffles)
        counts_b.append(rb.reshuffles)
        leaves_a.append(ra.leaf_reads)
        leaves_b.append(rb.leaf_reads)
    if len(set(counts_a + counts_b)) <= 1:
        ks_stat, ks_p = 0.0, 1.0
    else:
        ks = stats.ks_2samp(counts_a, counts_b)
        ks_stat, ks_p = float(ks.statistic), float(ks.pvalue)
    la = np.concatenate(leaves_a) if leaves_a else np.zeros(0, dtype=np.int64)
    lb = np.concatenate(leaves_b) if leaves_b else np.zeros(0, dtype=np.int64)
    nleaves = leaf_count or int(max(la.max(initial=0), lb.max(initial=0)) + 1)
    chi = {"a": _chi_square(la, nleaves), "b": _chi_square(lb, nleaves)}
    return AuditReport(lengths_equal, shapes_equal, counts_a, counts_b, ks_stat, ks_p, chi, evict_ok, alpha,
                       sorted(set(mismatched)))


class EngineFactory:
    """Fresh engine per seed over a fixed packed index."""

    def __init__(self, packed, traversal_codebook, pruning_codebook, search, storage, traversal_codes=None):
        self.packed = packed
        self.cb_t = traversal_codebook
        self.cb_p = pruning_codebook
        self.search = search
        self.storage = storage
        self.codes = traversal_codes if traversal_codes is not None else traversal_codebook.encode(packed.vectors())
        N = packed.n + storage.insert_capacity + 1
        self.leaf_count = plan(N, packed.traversal_block_size, storage.d, storage.Z, storage.reshuffle_rate).leaf_count

    def __call__(self, seed: int) -> Engine:
        return Engine.setup(self.packed, self.cb_t, self.cb_p, self.search, replace(self.storage, seed=seed),
                            traversal_codes=self.codes)
