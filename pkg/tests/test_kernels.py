"""Loop kernels (numba source) vs vectorized numpy kernels: identical results."""
import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oblivann import _accel, kernels


def py(fn):
    return getattr(fn, "py_func", fn)


def both(name):
    loop, npv = kernels.KERNELS[name]
    return loop, py(loop), npv


floats = hnp.arrays(np.float32, st.tuples(st.integers(1, 30), st.integers(1, 6)),
                    elements=st.floats(-10, 10, width=32))


@settings(max_examples=40, deadline=None)
@given(X=floats)
def test_sq_dists(X):
    q = X[0] * 0.5
    want = ((X.astype(np.float64) - q.astype(np.float64)) ** 2).sum(axis=1)
    for f in both("sq_dists_to"):
        np.testing.assert_allclose(f(X, q), want, rtol=1e-12, atol=1e-9)
    for f in both("sq_dists_matrix"):
        np.testing.assert_allclose(f(X[:3], X), np.stack([want if r == -1 else
                                                          ((X.astype(np.float64) - X[r].astype(np.float64)) ** 2).sum(1)
                                                          for r in range(min(3, len(X)))]), rtol=1e-9, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(X=floats, K=st.integers(1, 5))
def test_knn_equivalent_and_tie_rule(X, K):
    K = min(K, X.shape[0])
    Q = X[: min(4, len(X))]
    outs = [f(Q, X, K) for f in both("knn")]
    for ids, d in outs[1:]:
        assert np.array_equal(ids, outs[0][0])
        np.testing.assert_allclose(d, outs[0][1], rtol=1e-9, atol=1e-9)
    # lexicographic (distance, id) oracle
    for r, q in enumerate(Q):
        dd = ((X.astype(np.float64) - q.astype(np.float64)) ** 2).sum(1)
        want = sorted(range(len(X)), key=lambda i: (dd[i], i))[:K]
        assert outs[0][0][r].tolist() == want


def test_knn_ties_by_id():
    X = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.float32)
    for f in both("knn"):
        assert f(np.zeros((1, 2), np.float32), X, 4)[0][0].tolist() == [0, 1, 2, 3]


def test_nearest_centroid_lowest_index_tie():
    C = np.array([[0, 0], [1, 0], [1, 0], [0, 0]], dtype=np.float32)
    Xs = np.array([[0.9, 0], [0.1, 0], [0.5, 0]], dtype=np.float32)
    for f in both("nearest_centroid"):
        assert f(Xs, C).tolist() == [1, 0, 0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), m=st.integers(1, 8), n=st.integers(1, 50))
def test_adc_equivalent(seed, m, n):
    rng = np.random.default_rng(seed)
    table = rng.random((m, 16))
    codes = rng.integers(0, 16, size=(n, m)).astype(np.uint8)
    want = table[np.arange(m)[None, :], codes].sum(1)
    for f in both("adc_distances"):
        np.testing.assert_allclose(f(table, codes), want, rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 60), R=st.integers(1, 8), Ls=st.integers(1, 20))
def test_greedy_search_equivalent(seed, n, R, Ls):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 3), dtype=np.float32)
    adj = np.full((n, R), -1, dtype=np.int32)
    deg = rng.integers(0, min(R, n) + 1, size=n).astype(np.int32)
    for p in range(n):
        adj[p, :deg[p]] = rng.choice(n, size=deg[p], replace=False)
    q = rng.random(3, dtype=np.float32)
    outs = []
    for f in both("greedy_search"):
        seen = np.zeros(n, dtype=np.int64)
        outs.append(f(X, adj, deg, 0, q, Ls, seen, 1))
    for o in outs[1:]:
        for a, b in zip(o, outs[0]):
            np.testing.assert_allclose(a, b)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 40), R=st.integers(1, 10),
       alpha=st.floats(1.0001, 3.0))
def test_robust_prune_equivalent(seed, n, R, alpha):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(n + 1, 2)).astype(np.float32)   # coarse grid: many ties
    xq = X[-1]
    ids = rng.permutation(n).astype(np.int64)
    d = ((X[ids].astype(np.float64) - xq) ** 2).sum(1)
    outs = [f(X, xq, ids, d, alpha, R).tolist() for f in both("robust_prune")]
    assert outs[1] == outs[0] == outs[2]
    assert len(outs[0]) <= R and set(outs[0]) <= set(ids.tolist())


def test_robust_prune_input_order_independent():
    rng = np.random.default_rng(0)
    X = rng.random((30, 4), dtype=np.float32)
    ids = np.arange(1, 30)
    d = ((X[ids] - X[0]) ** 2).sum(1).astype(np.float64)
    base = kernels.robust_prune(X, X[0], ids, d, 1.2, 8).tolist()
    p = rng.permutation(ids.size)
    assert kernels.robust_prune(X, X[0], ids[p], d[p], 1.2, 8).tolist() == base


def test_env_flag_selects_numpy_backend():
    code = "from oblivann import kernels, backend_name; print(backend_name(), kernels.sq_dists_to is kernels.sq_dists_to_np)"
    env = dict(os.environ, OBLIVANN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_backend_reported():
    assert _accel.backend_name() in ("numba", "numpy")
    if _accel.NUMBA_ENABLED:
        assert kernels.sq_dists_to is kernels.sq_dists_to_loop
