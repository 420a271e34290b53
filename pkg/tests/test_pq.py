import numpy as np
import pytest

from oblivann import pq
from oblivann.pq import PqCodebook, TrainingError, approx_distance, train


def test_distinct_vectors_reproduced_exactly():
    X = np.random.default_rng(0).random((40, 5), dtype=np.float32)
    cb = train(X, m=1, k_c=40, iters=5)
    np.testing.assert_array_equal(cb.decode(cb.encode(X)), X)
    assert cb.train_mse[-1] == 0.0


def test_single_centroid_is_the_mean():
    X = np.random.default_rng(1).normal(size=(300, 6)).astype(np.float32)
    cb = train(X, m=6, k_c=1, iters=3)
    codes = cb.encode(X)
    assert (codes == 0).all()
    q = np.ones(6, dtype=np.float32)
    t = cb.adc_table(q)
    want = float(((q.astype(np.float64) - X.astype(np.float64).mean(0)) ** 2).sum())
    assert approx_distance(t, codes[0]) == pytest.approx(want, rel=1e-5)


def test_mse_monotone_over_iterations():
    X = np.random.default_rng(2).normal(size=(2000, 16)).astype(np.float32)
    cb = train(X, m=4, k_c=64, iters=15)
    mse = np.array(cb.train_mse)
    assert mse.size == 16
    assert np.all(np.diff(mse) <= 1e-9 * mse[0])


def test_deterministic_under_seed():
    X = np.random.default_rng(3).random((500, 8), dtype=np.float32)
    a, b = train(X, 2, 32, 5, seed=9), train(X, 2, 32, 5, seed=9)
    assert a.to_bytes() == b.to_bytes()


def test_encode_centroid_gives_own_index():
    X = np.random.default_rng(4).random((500, 8), dtype=np.float32)
    cb = train(X, m=2, k_c=16, iters=5)
    for j in (0, 7, 15):
        v = np.concatenate([cb.centroids[0, j], cb.centroids[1, j]])
        # skip if another centroid coincides (lowest index wins)
        if len({tuple(c) for c in cb.centroids[0]}) == 16 and len({tuple(c) for c in cb.centroids[1]}) == 16:
            assert cb.encode(v).tolist() == [[j, j]]


def test_residual_is_per_subspace_sum():
    X = np.random.default_rng(5).random((400, 9), dtype=np.float32)
    cb = train(X, m=3, k_c=8, iters=4)
    codes = cb.encode(X[:20])
    rec = cb.decode(codes)
    total = ((X[:20].astype(np.float64) - rec) ** 2).sum(1)
    parts = sum(((X[:20, 3 * s:3 * s + 3].astype(np.float64) - cb.centroids[s][codes[:, s]]) ** 2).sum(1)
                for s in range(3))
    np.testing.assert_allclose(total, parts, rtol=1e-12)


def test_tie_goes_to_lowest_centroid():
    cb = PqCodebook(dims=1, m=1, k_c=3, centroids=np.array([[[1.0], [-1.0], [1.0]]], dtype=np.float32))
    assert cb.encode(np.array([[0.0]])).tolist() == [[0]]
    assert cb.encode(np.array([[1.0]])).tolist() == [[0]]


def test_padding_when_m_does_not_divide():
    X = np.random.default_rng(6).random((300, 10), dtype=np.float32)
    cb = train(X, m=4, k_c=8, iters=2)
    assert cb.dims_per_subspace == 3 and cb.code_bytes == 4
    assert cb.decode(cb.encode(X[:3])).shape == (3, 10)


def test_query_on_a_centroid_combination_is_zero():
    X = np.random.default_rng(7).random((400, 8), dtype=np.float32)
    cb = train(X, m=4, k_c=16, iters=3)
    code = np.array([3, 1, 4, 1], dtype=np.uint8)
    q = cb.decode(code)[0]
    assert approx_distance(cb.adc_table(q), code) == pytest.approx(0.0, abs=1e-12)


def test_adc_equals_reconstruction_distance():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(1000, 24)).astype(np.float32)
    cb = train(X, m=6, k_c=64, iters=5)
    codes = cb.encode(X)
    for q in rng.normal(size=(10, 24)).astype(np.float32):
        t = cb.adc_table(q)
        approx = cb.approx_distances(t, codes)
        exact = ((cb.decode(codes).astype(np.float64) - q.astype(np.float64)) ** 2).sum(1)
        np.testing.assert_allclose(approx, exact, rtol=1e-5)
        assert approx_distance(t, codes[0]) == pytest.approx(approx[0], rel=1e-12)


def test_more_hint_bytes_is_more_accurate():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(3000, 32)).astype(np.float32)
    held = rng.normal(size=(400, 32)).astype(np.float32)
    Q = rng.normal(size=(20, 32)).astype(np.float32)
    exact = ((held[None, :, :].astype(np.float64) - Q[:, None, :]) ** 2).sum(2)
    truth = np.argsort(exact, axis=1, kind="stable")[:, :10]
    errs, keep = [], []
    for m in (2, 4, 8, 16):
        cb = train(X, m=m, k_c=64, iters=8)
        codes = cb.encode(held)
        approx = np.stack([cb.approx_distances(cb.adc_table(q), codes) for q in Q])
        errs.append(np.abs(approx - exact).mean())
        top = np.argsort(approx, axis=1, kind="stable")[:, :10]
        keep.append(np.mean([len(set(a) & set(b)) / 10 for a, b in zip(top, truth)]))
    assert all(b <= a for a, b in zip(errs, errs[1:]))
    assert all(b >= a for a, b in zip(keep, keep[1:]))


def test_serialization_round_trip(tmp_path):
    X = np.random.default_rng(10).random((300, 8), dtype=np.float32)
    cb = train(X, m=2, k_c=16, iters=2)
    cb.save(tmp_path / "cb.pq")
    back = PqCodebook.load(tmp_path / "cb.pq")
    np.testing.assert_array_equal(back.centroids, cb.centroids)
    assert (back.dims, back.m, back.k_c) == (8, 2, 16)
    raw = cb.to_bytes()
    with pytest.raises(ValueError):
        PqCodebook.from_bytes(b"garbage!" + raw[8:])
    with pytest.raises(ValueError):
        PqCodebook.from_bytes(raw[:-4])
    with pytest.raises(ValueError):
        PqCodebook.from_bytes(raw[:8] + (pq.FORMAT_VERSION + 1).to_bytes(4, "little") + raw[12:])


def test_training_errors():
    X = np.zeros((10, 4), dtype=np.float32)
    with pytest.raises(TrainingError):
        train(X, m=1, k_c=16)
    with pytest.raises(TrainingError):
        train(X, m=1, k_c=300)
    with pytest.raises(TrainingError):
        train(X[0], m=1, k_c=1)


def test_dimension_mismatch():
    X = np.random.default_rng(11).random((50, 4), dtype=np.float32)
    cb = train(X, m=2, k_c=4, iters=1)
    with pytest.raises(ValueError):
        cb.encode(np.zeros(5))
    with pytest.raises(ValueError):
        cb.adc_table(np.zeros(3))
