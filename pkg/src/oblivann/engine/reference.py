"""Plain in-memory references for the engine's search, used as test oracles.

These walk the packed arrays directly (no devices, no padding) and must
return exactly what the engine returns for the same index and query.
"""
from __future__ import annotations

import heapq

import numpy as np

from ..graph.packing import PackedIndex
from ..pq import PqCodebook


def _traverse(packed: PackedIndex, ht: np.ndarray, start: int, L_cand: int, W: int):
    """Best-first expansion by traversal-hint distance, W nodes per round, at most L_cand fetches.

    A node enters the candidate list at most once; the list keeps the L_cand best (ties by id).
    """
    adj = [packed.unpack_node(p) for p in range(packed.n)]
    cand = [start]
    seen = {start}
    visited: list[int] = []
    done: set[int] = set()
    while len(visited) < L_cand:
        room = min(W, L_cand - len(visited))
        picks = [p for p in cand if p not in done][:room]
        if not picks:
            break
        done.update(picks)
        visited.extend(picks)
        for p in picks:
            for nb in adj[p][0].tolist():
                if nb not in seen:
                    seen.add(nb)
                    cand.append(nb)
        cand = sorted(cand, key=lambda p: (float(ht[p]), p))[:L_cand]
    return visited, adj


def search_reference(packed: PackedIndex, cb_t: PqCodebook, cb_p: PqCodebook | None, q, K: int, L_cand: int,
                     L_prune: int, W: int, codes_t=None, deleted=()) -> np.ndarray:
    q = np.asarray(q, dtype=np.float32)
    codes_t = cb_t.encode(packed.vectors()) if codes_t is None else codes_t
    ht = cb_t.approx_distances(cb_t.adc_table(q), codes_t)
    visited, adj = _traverse(packed, ht, packed.start, L_cand, W)
    dead = set(deleted)
    keep = [p for p in visited if not adj[p][2] and p not in dead]
    if cb_p is None:
        hp = {p: 0.0 for p in keep}
    else:
        tab = cb_p.adc_table(q)
        hp = {p: float(cb_p.approx_distances(tab, np.frombuffer(adj[p][1], dtype=np.uint8)[None, :])[0])
              for p in keep}
    pruned = heapq.nsmallest(L_prune, keep, key=lambda p: (hp[p], p))
    X = packed.vectors()
    exact = {p: float(((X[p].astype(np.float64) - q.astype(np.float64)) ** 2).sum()) for p in pruned}
    top = sorted(pruned, key=lambda p: (exact[p], p))[:K]
    out = np.full(K, -1, dtype=np.int64)
    out[:len(top)] = top
    return out


def coupled_reference(packed: PackedIndex, cb_t: PqCodebook, q, K: int, L_cand: int, W: int,
                      codes_t=None) -> np.ndarray:
    """Same traversal, exact re-rank of every visited node (no pruning step)."""
    q = np.asarray(q, dtype=np.float32)
    codes_t = cb_t.encode(packed.vectors()) if codes_t is None else codes_t
    ht = cb_t.approx_distances(cb_t.adc_table(q), codes_t)
    visited, adj = _traverse(packed, ht, packed.start, L_cand, W)
    keep = [p for p in visited if not adj[p][2]]
    X = packed.vectors()
    exact = {p: float(((X[p].astype(np.float64) - q.astype(np.float64)) ** 2).sum()) for p in keep}
    top = sorted(keep, key=lambda p: (exact[p], p))[:K]
    out = np.full(K, -1, dtype=np.int64)
    out[:len(top)] = top
    return out
