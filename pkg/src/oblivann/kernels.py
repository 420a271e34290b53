"""Hot numeric kernels, each in two implementations.

``*_loop`` functions are plain loops compiled by numba when it is enabled;
``*_np`` functions are vectorized numpy. The public names pick the loop version
when numba is active and the numpy version otherwise (see :mod:`oblivann._accel`).
Distances are squared L2, accumulated in float64 from float32 storage. Every
ranking breaks ties by the lower id.
"""
from __future__ import annotations

import bisect

import numpy as np

from ._accel import NUMBA_ENABLED, jit

_CHUNK = 256


# --------------------------------------------------------------------------- distances
@jit
def sq_dists_to_loop(X, q):
    n, dim = X.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for j in range(dim):
            t = np.float64(X[i, j]) - np.float64(q[j])
            acc += t * t
        out[i] = acc
    return out


def sq_dists_to_np(X, q):
    diff = np.asarray(X, dtype=np.float64) - np.asarray(q, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)


@jit
def sq_dists_matrix_loop(Q, X):
    m = Q.shape[0]
    out = np.empty((m, X.shape[0]), dtype=np.float64)
    for r in range(m):
        out[r] = sq_dists_to_loop(X, Q[r])
    return out


def sq_dists_matrix_np(Q, X):
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((Q.shape[0], X.shape[0]), dtype=np.float64)
    for r in range(Q.shape[0]):
        diff = X - Q[r]
        out[r] = np.einsum("ij,ij->i", diff, diff)
    return out


@jit
def knn_loop(Q, X, K):
    m = Q.shape[0]
    ids = np.empty((m, K), dtype=np.int64)
    dists = np.empty((m, K), dtype=np.float64)
    for r in range(m):
        d = sq_dists_to_loop(X, Q[r])
        order = np.argsort(d, kind="mergesort")
        for k in range(K):
            ids[r, k] = order[k]
            dists[r, k] = d[order[k]]
    return ids, dists


def knn_np(Q, X, K):
    Q = np.asarray(Q)
    ids = np.empty((Q.shape[0], K), dtype=np.int64)
    dists = np.empty((Q.shape[0], K), dtype=np.float64)
    X64 = np.asarray(X, dtype=np.float64)
    for r in range(Q.shape[0]):
        diff = X64 - np.asarray(Q[r], dtype=np.float64)
        d = np.einsum("ij,ij->i", diff, diff)
        order = np.argsort(d, kind="stable")[:K]
        ids[r] = order
        dists[r] = d[order]
    return ids, dists


# --------------------------------------------------------------------------- product quantization
@jit
def nearest_centroid_loop(Xs, C):
    n, ds = Xs.shape
    k = C.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(k):
            acc = 0.0
            for j in range(ds):
                t = np.float64(Xs[i, j]) - np.float64(C[c, j])
                acc += t * t
            if acc < best:
                best = acc
                arg = c
        out[i] = arg
    return out


def nearest_centroid_np(Xs, C):
    Xs = np.asarray(Xs, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    out = np.empty(Xs.shape[0], dtype=np.int64)
    for s in range(0, Xs.shape[0], _CHUNK):
        diff = Xs[s:s + _CHUNK, None, :] - C[None, :, :]
        out[s:s + _CHUNK] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out


@jit
def adc_distances_loop(table, codes):
    n, m = codes.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        for s in range(m):
            acc += table[s, codes[i, s]]
        out[i] = acc
    return out


def adc_distances_np(table, codes):
    codes = np.asarray(codes)
    if codes.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    return table[np.arange(codes.shape[1])[None, :], codes.astype(np.intp)].sum(axis=1)


# --------------------------------------------------------------------------- graph search / pruning
@jit
def greedy_search_loop(X, adj, deg, start, q, Lsize, seen, stamp):
    """Best-first search. Returns (expanded ids, their dists, final list ids, list dists)."""
    R = adj.shape[1]
    cap = Lsize + R + 1
    lid = np.empty(cap, dtype=np.int64)
    ld = np.empty(cap, dtype=np.float64)
    lexp = np.zeros(cap, dtype=np.bool_)
    n = 0
    vid = np.empty(X.shape[0], dtype=np.int64)
    vd = np.empty(X.shape[0], dtype=np.float64)
    nv = 0
    dim = X.shape[1]

    acc = 0.0
    for j in range(dim):
        t = np.float64(X[start, j]) - np.float64(q[j])
        acc += t * t
    lid[0] = start
    ld[0] = acc
    n = 1
    seen[start] = stamp
    while True:
        pos = -1
        for i in range(n):
            if not lexp[i]:
                pos = i
                break
        if pos < 0:
            break
        lexp[pos] = True
        node = lid[pos]
        vid[nv] = node
        vd[nv] = ld[pos]
        nv += 1
        for e in range(deg[node]):
            nb = adj[node, e]
            if seen[nb] == stamp:
                continue
            seen[nb] = stamp
            acc = 0.0
            for j in range(dim):
                t = np.float64(X[nb, j]) - np.float64(q[j])
                acc += t * t
            if n >= Lsize and (acc > ld[n - 1] or (acc == ld[n - 1] and nb > lid[n - 1])):
                continue
            # insertion into the sorted list
            i = n
            while i > 0 and (ld[i - 1] > acc or (ld[i - 1] == acc and lid[i - 1] > nb)):
                lid[i] = lid[i - 1]
                ld[i] = ld[i - 1]
                lexp[i] = lexp[i - 1]
                i -= 1
            lid[i] = nb
            ld[i] = acc
            lexp[i] = False
            if n < Lsize:
                n += 1
    return vid[:nv].copy(), vd[:nv].copy(), lid[:n].copy(), ld[:n].copy()


def greedy_search_np(X, adj, deg, start, q, Lsize, seen, stamp):
    q64 = np.asarray(q, dtype=np.float64)
    d0 = float(sq_dists_to_np(X[start:start + 1], q64)[0])
    items = [(d0, int(start))]          # sorted (dist, id)
    expanded: set[int] = set()
    seen[start] = stamp
    vid, vd = [], []
    while True:
        pos = next((i for i, it in enumerate(items) if it[1] not in expanded), -1)
        if pos < 0:
            break
        dist, node = items[pos]
        expanded.add(node)
        vid.append(node)
        vd.append(dist)
        nbrs = adj[node, :deg[node]]
        nbrs = nbrs[seen[nbrs] != stamp]
        if nbrs.size == 0:
            continue
        seen[nbrs] = stamp
        dd = sq_dists_to_np(X[nbrs], q64)
        for dist_nb, nb in zip(dd.tolist(), nbrs.tolist()):
            key = (dist_nb, nb)
            if len(items) >= Lsize and key > items[-1]:
                continue
            bisect.insort(items, key)
            if len(items) > Lsize:
                items.pop()
    lid = np.array([it[1] for it in items], dtype=np.int64)
    ld = np.array([it[0] for it in items], dtype=np.float64)
    return np.array(vid, dtype=np.int64), np.array(vd, dtype=np.float64), lid, ld


@jit
def robust_prune_loop(X, xq, cand_ids, cand_d, alpha, R):
    """Keep candidates in (dist, id) order; drop later p' when dist(p, p') <= alpha * dist(q, p')."""
    order = np.argsort(cand_d, kind="mergesort")
    n = cand_ids.shape[0]
    # stable sort by distance, then fix id order among equal distances
    ids = cand_ids[order].copy()
    ds = cand_d[order].copy()
    for i in range(1, n):
        j = i
        while j > 0 and ds[j - 1] == ds[j] and ids[j - 1] > ids[j]:
            t = ids[j - 1]
            ids[j - 1] = ids[j]
            ids[j] = t
            j -= 1
    removed = np.zeros(n, dtype=np.bool_)
    # duplicates: keep first occurrence only
    for i in range(1, n):
        if ids[i] == ids[i - 1]:
            removed[i] = True
    a2 = alpha * alpha
    dim = X.shape[1]
    kept = np.empty(R, dtype=np.int64)
    nk = 0
    for i in range(n):
        if removed[i]:
            continue
        p = ids[i]
        kept[nk] = p
        nk += 1
        if nk >= R:
            break
        for j in range(i + 1, n):
            if removed[j]:
                continue
            acc = 0.0
            pj = ids[j]
            for c in range(dim):
                t = np.float64(X[p, c]) - np.float64(X[pj, c])
                acc += t * t
            if acc <= a2 * ds[j]:
                removed[j] = True
    return kept[:nk].copy()


def robust_prune_np(X, xq, cand_ids, cand_d, alpha, R):
    cand_ids = np.asarray(cand_ids, dtype=np.int64)
    cand_d = np.asarray(cand_d, dtype=np.float64)
    order = np.lexsort((cand_ids, cand_d))
    ids = cand_ids[order]
    ds = cand_d[order]
    keep_first = np.ones(ids.size, dtype=bool)
    keep_first[1:] = ids[1:] != ids[:-1]
    alive = keep_first.copy()
    a2 = alpha * alpha
    X64 = np.asarray(X[ids], dtype=np.float64) if ids.size else np.zeros((0, X.shape[1]))
    kept = []
    for i in range(ids.size):
        if not alive[i]:
            continue
        kept.append(int(ids[i]))
        if len(kept) >= R:
            break
        rest = np.nonzero(alive[i + 1:])[0] + i + 1
        if rest.size:
            diff = X64[rest] - X64[i]
            dpp = np.einsum("ij,ij->i", diff, diff)
            alive[rest[dpp <= a2 * ds[rest]]] = False
    return np.array(kept, dtype=np.int64)


if NUMBA_ENABLED:
    sq_dists_to = sq_dists_to_loop
    sq_dists_matrix = sq_dists_matrix_loop
    knn = knn_loop
    nearest_centroid = nearest_centroid_loop
    adc_distances = adc_distances_loop
    greedy_search = greedy_search_loop
    robust_prune = robust_prune_loop
else:
    sq_dists_to = sq_dists_to_np
    sq_dists_matrix = sq_dists_matrix_np
    knn = knn_np
    nearest_centroid = nearest_centroid_np
    adc_distances = adc_distances_np
    greedy_search = greedy_search_np
    robust_prune = robust_prune_np

KERNELS = {
    "sq_dists_to": (sq_dists_to_loop, sq_dists_to_np),
    "sq_dists_matrix": (sq_dists_matrix_loop, sq_dists_matrix_np),
    "knn": (knn_loop, knn_np),
    "nearest_centroid": (nearest_centroid_loop, nearest_centroid_np),
    "adc_distances": (adc_distances_loop, adc_distances_np),
    "greedy_search": (greedy_search_loop, greedy_search_np),
    "robust_prune": (robust_prune_loop, robust_prune_np),
}
