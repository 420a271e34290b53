"""Vamana-style proximity graph: incremental build, insert, lazy delete + consolidation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .. import kernels

MEDOID_EXACT_LIMIT = 100_000
MEDOID_SAMPLE = 10_000


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class BuildParams:
    max_degree: int = 32
    build_list_size: int = 128
    alpha: float = 1.01
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 1:
            raise GraphError("alpha must be > 1")
        if self.max_degree < 1 or self.build_list_size < 1:
            raise GraphError("max_degree and build_list_size must be positive")


def medoid(vectors: np.ndarray, seed: int = 0) -> int:
    """Index of the point closest to the mean (sampled above 1e5 points)."""
    X = np.asarray(vectors, dtype=np.float32)
    ids = np.arange(X.shape[0])
    if X.shape[0] > MEDOID_EXACT_LIMIT:
        ids = np.sort(np.random.default_rng(seed).choice(X.shape[0], MEDOID_SAMPLE, replace=False))
    mean = X[ids].astype(np.float64).mean(axis=0)
    d = kernels.sq_dists_to(np.ascontiguousarray(X[ids]), mean)
    return int(ids[int(np.argmin(d))])


def robust_prune(vectors: np.ndarray, target: int, candidates: Iterable[int], alpha: float, R: int,
                 target_vec: Optional[np.ndarray] = None) -> list[int]:
    """Distance-ordered diversification of ``candidates`` around ``target`` (self excluded)."""
    X = vectors
    cand = np.array(sorted({int(c) for c in candidates if int(c) != target}), dtype=np.int64)
    if cand.size == 0:
        return []
    xq = X[target] if target_vec is None else np.asarray(target_vec, dtype=np.float32)
    d = kernels.sq_dists_to(np.ascontiguousarray(X[cand]), xq)
    return kernels.robust_prune(X, xq, cand, d, float(alpha), int(R)).tolist()


class GraphIndex:
    """Adjacency lists in a fixed-width int32 matrix, plus tombstones."""

    def __init__(self, dims: int, params: BuildParams, capacity: int = 16):
        self.params = params
        self.dims = int(dims)
        cap = max(int(capacity), 2)
        self.vectors = np.zeros((cap, dims), dtype=np.float32)
        self.adj = np.full((cap, params.max_degree), -1, dtype=np.int32)
        self.deg = np.zeros(cap, dtype=np.int32)
        self.present = np.zeros(cap, dtype=bool)
        self.deleted = np.zeros(cap, dtype=bool)
        self.start = -1
        self._seen = np.zeros(cap, dtype=np.int64)
        self._stamp = 0

    # ---------------------------------------------------------------- basic accessors
    @property
    def capacity(self) -> int:
        return self.vectors.shape[0]

    @property
    def size(self) -> int:
        return int(self.present.sum())

    def live_ids(self) -> np.ndarray:
        return np.nonzero(self.present & ~self.deleted)[0]

    def neighbors(self, p: int) -> np.ndarray:
        return self.adj[p, :self.deg[p]].copy()

    def set_neighbors(self, p: int, nbrs) -> None:
        nbrs = list(nbrs)
        R = self.params.max_degree
        if len(nbrs) > R:
            raise GraphError(f"out-degree {len(nbrs)} exceeds {R}")
        self.adj[p, :] = -1
        self.adj[p, :len(nbrs)] = nbrs
        self.deg[p] = len(nbrs)

    def _grow(self, need: int) -> None:
        cap = self.capacity
        if need <= cap:
            return
        new = max(need, 2 * cap)
        def ext(a, fill):
            out = np.full((new,) + a.shape[1:], fill, dtype=a.dtype)
            out[:cap] = a
            return out
        self.vectors = ext(self.vectors, 0)
        self.adj = ext(self.adj, -1)
        self.deg = ext(self.deg, 0)
        self.present = ext(self.present, False)
        self.deleted = ext(self.deleted, False)
        self._seen = ext(self._seen, 0)

    def _dists(self, ids, x) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        return kernels.sq_dists_to(np.ascontiguousarray(self.vectors[ids]), np.asarray(x, dtype=np.float32))

    # ---------------------------------------------------------------- search
    def greedy_search(self, x, list_size: int):
        """(visited ids, visited dists, list ids, list dists) of a best-first search from the start node."""
        if self.start < 0:
            raise GraphError("empty graph")
        self._stamp += 1
        return kernels.greedy_search(self.vectors, self.adj, self.deg, self.start,
                                     np.asarray(x, dtype=np.float32), int(list_size), self._seen, self._stamp)

    def search(self, x, K: int, list_size: int) -> np.ndarray:
        """Plain (non-oblivious) top-K search; tombstoned nodes are navigated but not returned."""
        _, _, lid, _ = self.greedy_search(x, max(list_size, K))
        if self.deleted.any():
            lid = lid[~self.deleted[lid]]
        return lid[:K]

    # ---------------------------------------------------------------- mutation
    def _link(self, p: int) -> None:
        prm = self.params
        x = self.vectors[p]
        vid, _, _, _ = self.greedy_search(x, prm.build_list_size)
        self.set_neighbors(p, robust_prune(self.vectors, p, vid, prm.alpha, prm.max_degree))
        for j in self.neighbors(p).tolist():
            dj = self.deg[j]
            cur = self.adj[j, :dj]
            if p in cur:
                continue
            if dj < prm.max_degree:
                self.adj[j, dj] = p
                self.deg[j] = dj + 1
            else:
                self.set_neighbors(j, robust_prune(self.vectors, j, list(cur) + [p], prm.alpha, prm.max_degree))

    def insert(self, p: int, x) -> None:
        p = int(p)
        if p < 0:
            raise GraphError("ids must be non-negative")
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (self.dims,):
            raise GraphError(f"vector must have shape ({self.dims},)")
        self._grow(p + 1)
        if self.present[p]:
            raise GraphError(f"id {p} already present")
        self.vectors[p] = x
        self.present[p] = True
        if self.start < 0:
            self.start = p
            return
        self._link(p)

    def delete_batch(self, ids: Iterable[int]) -> None:
        ids = [int(i) for i in ids]
        for i in ids:
            if i < 0 or i >= self.capacity or not self.present[i] or self.deleted[i]:
                raise GraphError(f"unknown or already deleted id {i}")
        self.deleted[ids] = True

    def tombstone_fraction(self) -> float:
        live = int((self.present & ~self.deleted).sum())
        return float(self.deleted.sum()) / max(live, 1)

    def consolidate(self) -> int:
        """Repair every neighborhood that touches a tombstone, then drop the tombstoned nodes.

        Repair candidates are the surviving neighbors plus the live neighbors of each
        deleted neighbor. Returns the number of repaired nodes.
        """
        dead = self.deleted & self.present
        if not dead.any():
            return 0
        prm = self.params
        repaired = 0
        for p in self.live_ids().tolist():
            nb = self.neighbors(p)
            bad = dead[nb]
            if not bad.any():
                continue
            cand = set(nb[~bad].tolist())
            for q in nb[bad].tolist():
                for r in self.neighbors(q).tolist():
                    if not dead[r] and r != p:
                        cand.add(r)
            self.set_neighbors(p, robust_prune(self.vectors, p, cand, prm.alpha, prm.max_degree))
            repaired += 1
        gone = np.nonzero(dead)[0]
        for q in gone.tolist():
            self.set_neighbors(q, [])
        self.present[gone] = False
        self.deleted[gone] = False
        if self.start >= 0 and not self.present[self.start]:
            live = self.live_ids()
            self.start = int(live[medoid(self.vectors[live])]) if live.size else -1
        return repaired

    # ---------------------------------------------------------------- checks
    def check_invariants(self) -> None:
        R = self.params.max_degree
        for p in np.nonzero(self.present)[0].tolist():
            nb = self.neighbors(p)
            assert nb.size <= R
            assert (nb != p).all(), f"self loop at {p}"
            assert self.present[nb].all(), f"node {p} references a missing node"
            assert np.unique(nb).size == nb.size, f"duplicate neighbor at {p}"

    def reachable_from_start(self) -> np.ndarray:
        seen = np.zeros(self.capacity, dtype=bool)
        if self.start < 0:
            return seen
        stack = [self.start]
        seen[self.start] = True
        while stack:
            p = stack.pop()
            for r in self.neighbors(p).tolist():
                if not seen[r]:
                    seen[r] = True
                    stack.append(r)
        return seen


def build(vectors, params: BuildParams | None = None) -> GraphIndex:
    """Incremental build: start at the medoid, insert the rest in a seeded random order."""
    params = params or BuildParams()
    X = np.ascontiguousarray(vectors, dtype=np.float32)
    if X.ndim != 2 or X.shape[0] < 2:
        raise GraphError("need at least 2 vectors")
    g = GraphIndex(X.shape[1], params, capacity=X.shape[0])
    g.vectors[:] = X
    s = medoid(X, params.seed)
    g.present[s] = True
    g.start = s
    order = np.random.default_rng(params.seed).permutation(X.shape[0])
    for p in order.tolist():
        if p == s:
            continue
        g.present[p] = True
        g._link(p)
    return g


def save_graph(graph: GraphIndex, path) -> None:
    p = graph.params
    np.savez(path, vectors=graph.vectors, adj=graph.adj, deg=graph.deg, present=graph.present,
             deleted=graph.deleted, start=np.int64(graph.start),
             params=np.array([p.max_degree, p.build_list_size, p.seed], dtype=np.int64), alpha=np.float64(p.alpha))


def load_graph(path) -> GraphIndex:
    with np.load(path) as z:
        R, Lb, seed = (int(v) for v in z["params"])
        g = GraphIndex(z["vectors"].shape[1], BuildParams(R, Lb, float(z["alpha"]), seed), z["vectors"].shape[0])
        g.vectors[:] = z["vectors"]
        g.adj[:] = z["adj"]
        g.deg[:] = z["deg"]
        g.present[:] = z["present"]
        g.deleted[:] = z["deleted"]
        g.start = int(z["start"])
    return g
