import numpy as np
import pytest

from oblivann.bench.metrics import brute_force_knn, recall_at_k
from oblivann.graph import BuildParams, GraphError, build, robust_prune
from oblivann.graph.vamana import load_graph, save_graph, medoid


def line(*xs):
    return np.array([[x, 0.0] for x in xs], dtype=np.float32)


def test_prune_single_candidate_kept():
    X = line(0, 3)
    assert robust_prune(X, 0, [1], 1.2, 4) == [1]


def test_prune_collinear_example():
    X = line(0, 1, 2, 4)
    assert robust_prune(X, 0, [3, 2, 1], 1.2, 4) == [1]


def test_prune_huge_alpha_keeps_one():
    X = np.random.default_rng(0).random((30, 3), dtype=np.float32)
    assert len(robust_prune(X, 0, range(1, 30), 1e9, 10)) == 1


def test_prune_spread_points_all_kept():
    # opposite directions: nothing dominates anything
    X = line(0, 1, -2)
    assert robust_prune(X, 0, [1, 2], 1.2, 4) == [1, 2]
    assert robust_prune(X, 0, [1, 2], 1.2, 1) == [1]


def test_prune_excludes_target_and_is_subset():
    X = np.random.default_rng(1).random((40, 4), dtype=np.float32)
    out = robust_prune(X, 5, list(range(40)) * 2, 1.1, 8)
    assert 5 not in out and set(out) <= set(range(40)) and len(out) <= 8


def test_build_connected_from_start():
    X = np.random.default_rng(2).random((100, 2), dtype=np.float32)
    g = build(X, BuildParams(max_degree=8, build_list_size=32, alpha=1.2, seed=0))
    assert g.reachable_from_start()[:100].all()
    g.check_invariants()
    assert g.start == medoid(X)


def test_degree_bound_and_recall(small_data, small_index):
    X = small_data
    Q = np.random.default_rng(12).random((100, X.shape[1]), dtype=np.float32)
    g = small_index[0]
    assert (g.deg[:g.size] <= g.params.max_degree).all()
    g.check_invariants()
    truth = brute_force_knn(X, Q, 10)
    res = np.stack([g.search(q, 10, 64) for q in Q])
    assert recall_at_k(res, truth, 10) >= 0.95


def test_build_deterministic():
    X = np.random.default_rng(3).random((300, 8), dtype=np.float32)
    p = BuildParams(max_degree=12, build_list_size=32, seed=4)
    a, b = build(X, p), build(X, p)
    assert np.array_equal(a.adj, b.adj) and a.start == b.start


def test_build_params_validation():
    with pytest.raises(GraphError):
        BuildParams(alpha=1.0)
    with pytest.raises(GraphError):
        BuildParams(max_degree=0)
    with pytest.raises(GraphError):
        build(np.zeros((1, 3)))


def test_insert_then_top1_and_errors():
    rng = np.random.default_rng(4)
    X = rng.random((400, 8), dtype=np.float32)
    g = build(X, BuildParams(max_degree=12, build_list_size=48, seed=0))
    new = rng.random((20, 8), dtype=np.float32)
    for i, x in enumerate(new):
        g.insert(400 + i, x)
        assert g.search(x, 1, 32)[0] == 400 + i
    g.check_invariants()
    with pytest.raises(GraphError):
        g.insert(3, new[0])
    with pytest.raises(GraphError):
        g.insert(500, np.zeros(3))
    with pytest.raises(GraphError):
        g.delete_batch([9999])


def test_delete_consolidate_no_dangling_and_recall():
    rng = np.random.default_rng(5)
    X = rng.random((1000, 16), dtype=np.float32)
    Q = rng.random((100, 16), dtype=np.float32)
    params = BuildParams(max_degree=16, build_list_size=64, seed=0)
    g = build(X, params)
    dead = rng.choice(1000, 100, replace=False)
    g.delete_batch(dead)
    assert g.tombstone_fraction() == pytest.approx(100 / 900)
    for q in Q[:10]:
        assert not set(g.search(q, 10, 64).tolist()) & set(dead.tolist())
    g.consolidate()
    g.check_invariants()
    for p in g.live_ids():
        assert not set(g.neighbors(p).tolist()) & set(dead.tolist())
    surv = np.setdiff1d(np.arange(1000), dead)
    truth = surv[brute_force_knn(X[surv], Q, 10)]
    got = np.stack([g.search(q, 10, 64) for q in Q])
    fresh = build(X[surv], params)
    ref = surv[np.stack([fresh.search(q, 10, 64) for q in Q])]
    assert recall_at_k(got, truth, 10) >= recall_at_k(ref, truth, 10) - 0.02


def test_save_load(tmp_path, small_index):
    g = small_index[0]
    save_graph(g, tmp_path / "g.npz")
    h = load_graph(tmp_path / "g.npz")
    assert np.array_equal(h.adj, g.adj) and h.start == g.start and h.params == g.params
