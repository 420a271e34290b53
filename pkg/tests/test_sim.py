import numpy as np
import pytest

from oblivann.bench import simulate_stash
from oblivann.oram import plan, simulate, stash_bound


def test_zero_accesses_empty():
    cfg = plan(64, 8, 2, 4)
    res = simulate(cfg, 0)
    assert res.evictions == 0 and res.tail(0) == 0.0
    rep = simulate_stash(cfg, 0, seeds=[0])
    assert rep.histogram.size == 0 and rep.rows == [] and rep.load is None


def test_eviction_count_and_histogram():
    cfg = plan(256, 8, 2, 8)
    res = simulate(cfg, 7 * 100)
    assert res.evictions == 100
    h = res.evict_histogram()
    assert h.sum() == 100
    assert res.tail(-1) == 1.0


def test_deterministic_under_seed():
    cfg = plan(256, 8, 4, 16)
    a, b = simulate(cfg, 20_000, seed=5), simulate(cfg, 20_000, seed=5)
    assert np.array_equal(a.stash_after_evict, b.stash_after_evict)
    assert a.reshuffles == b.reshuffles


def test_small_tail_under_bound():
    cfg = plan(512, 8, 2, 8)
    rep = simulate_stash(cfg, 200_000, seeds=[0], infinite=False)
    assert rep.rows
    for r in rep.rows:
        assert r.bound == pytest.approx(stash_bound(cfg, r.R))
        assert r.ok


def test_infinite_mode_never_reshuffles_and_loads_near_target():
    cfg = plan(256, 8, 4, 16)
    res = simulate(cfg, 100_000, seed=1, infinite=True, n_batches=20)
    assert res.reshuffles == 0
    mean, sigma = res.time_avg_load()
    assert mean.size == cfg.level_offsets()[cfg.L]
    assert np.all(sigma > 0)
    wm, _ = res.write_time_load()
    # right after an eviction write a non-leaf bucket holds A(d-1)/2 blocks on average
    assert np.mean(wm) == pytest.approx(cfg.A * (cfg.d - 1) / 2, rel=0.05)


def test_custom_workload_lengths_checked():
    cfg = plan(64, 8, 2, 4)
    with pytest.raises(ValueError):
        simulate(cfg, 10, addrs=np.zeros(10, dtype=np.int64), leaves=np.zeros(5, dtype=np.int64))
    with pytest.raises(ValueError):
        simulate(cfg, -1)
