import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oblivann.oram import (BoundInapplicable, OramConfig, PlanningError, Variant, analytical_multipliers, depth_for,
                           dummy_slots_for, eviction_leaf, plan, q_value, reverse_digits, stash_bound)


# ---- independent oracles -------------------------------------------------------------
def q_oracle(d, Z, A):
    a = A * (d - 1) / 2.0
    return Z * (math.log(Z) - math.log(a)) + a - Z - 1 - math.log(d)


def poisson_sf_oracle(s, lam):
    term, cdf = math.exp(-lam), 0.0
    for k in range(s + 1):
        cdf += term
        term *= lam / (k + 1)
    return 1.0 - cdf


def reverse_oracle(x, d, L):
    digits = np.base_repr(x, base=d).rjust(L, "0") if L else ""
    return int(digits[::-1], d) if L else 0


def plan_oracle(N, d, Z, rate):
    A = max(A for A in range(1, 2 * Z // (d - 1) + 1) if q_oracle(d, Z, A) > 0)
    S = next(s for s in range(1, 10 * A + 50) if poisson_sf_oracle(s, A) <= rate)
    L = max(0, math.ceil(math.log(2 * N / (A * (d - 1)), d) - 1e-12))
    return A, S, L


# ---- planner -------------------------------------------------------------------------
def test_q_reference_values():
    assert q_value(8, 256, 60) == pytest.approx(q_oracle(8, 256, 60))
    assert q_value(8, 256, 60) == pytest.approx(1.6265, abs=1e-3)
    assert q_value(8, 256, 64) < 0


def test_d8_z256_picks_a_near_60():
    cfg = plan(8192, 64, 8, 256)
    assert 55 <= cfg.A <= 64
    assert cfg.q > 0
    assert q_value(8, 256, cfg.A + 1) <= 0


@pytest.mark.parametrize("N,d,Z", [(8, 2, 4), (8192, 8, 256), (8192, 8, 32), (8192, 2, 4), (8192, 2, 32),
                                   (8192, 2, 128), (8192, 2, 8), (8192, 8, 64), (8192, 4, 64), (10 ** 6, 8, 256)])
def test_planner_matches_grid_search(N, d, Z):
    cfg = plan(N, 64, d, Z, 1e-3)
    assert (cfg.A, cfg.S, cfg.L) == plan_oracle(N, d, Z, 1e-3)
    assert cfg.q > 0
    assert N <= cfg.a * d ** cfg.L


def test_small_planner_example():
    cfg = plan(8, 16, 2, 4, 1e-3)
    assert cfg.A <= 8 and cfg.q > 0


def test_planner_frozen_table():
    # frozen from the grid-search oracle above
    got = {(d, Z): (c.A, c.S, c.L) for d, Z in [(8, 256), (8, 32), (2, 4), (2, 32), (2, 128), (2, 8), (8, 64), (4, 64)]
           for c in [plan(8192, 64, d, Z)]}
    assert got == {(8, 256): (62, 88, 2), (8, 32): (5, 13, 3), (2, 4): (2, 8, 13), (2, 32): (45, 67, 9),
                   (2, 128): (216, 263, 7), (2, 8): (7, 16, 12), (8, 64): (13, 25, 3), (4, 64): (32, 51, 4)}


def test_planner_errors():
    with pytest.raises(PlanningError):
        plan(100, 64, 1, 4)
    with pytest.raises(PlanningError):
        plan(100, 64, 2, 0)
    with pytest.raises(PlanningError):
        plan(100, 64, 2, 4, reshuffle_rate=0)
    with pytest.raises(PlanningError):
        plan(100, 64, 8, 1)   # 2Z/(d-1) < 1


@pytest.mark.parametrize("A,rate", [(2, 1e-3), (7, 1e-3), (45, 1e-3), (62, 1e-3), (60, 1e-2), (13, 1e-4)])
def test_dummy_slots_poisson_rule(A, rate):
    S = dummy_slots_for(A, rate)
    assert poisson_sf_oracle(S, A) <= rate
    assert S == 1 or poisson_sf_oracle(S - 1, A) > rate


def test_depth_formula():
    for N, d, A in [(8192, 8, 62), (8192, 2, 45), (1, 2, 4), (10 ** 6, 4, 30)]:
        L = depth_for(N, d, A)
        assert d ** L * A * (d - 1) >= 2 * N
        assert L == 0 or d ** (L - 1) * A * (d - 1) < 2 * N


# ---- eviction schedule ---------------------------------------------------------------
def test_reverse_digits_examples():
    assert reverse_digits(0, 5, 3) == 0
    assert reverse_digits(6, 2, 3) == 3
    assert reverse_digits(10, 8, 2) == 17
    with pytest.raises(ValueError):
        reverse_digits(8, 2, 3)


@given(d=st.integers(2, 9), L=st.integers(0, 5), data=st.data())
def test_reverse_digits_property(d, L, data):
    x = data.draw(st.integers(0, d ** L - 1))
    r = reverse_digits(x, d, L)
    assert r == reverse_oracle(x, d, L)
    assert reverse_digits(r, d, L) == x


def test_eviction_order():
    # the cycle starting at ordinal 0; the first real eviction uses ordinal 1
    assert [eviction_leaf(i, 2, 2) for i in range(5)] == [0, 2, 1, 3, 0]
    assert eviction_leaf(1, 2, 2) == 2
    assert sorted(eviction_leaf(i, 8, 2) for i in range(64)) == list(range(64))


# ---- bound and multipliers -----------------------------------------------------------
def cfg_of(d, Z, A, L=3, S=10):
    return OramConfig(d=d, L=L, Z=Z, S=S, A=A, N=1, block_size=1)


def test_stash_bound_reference():
    c = cfg_of(8, 256, 60)
    assert c.a == 210
    want = (210 / 256) ** 40 / (1 - math.exp(-q_oracle(8, 256, 60)))
    assert stash_bound(c, 40) == pytest.approx(want, rel=1e-12)
    assert stash_bound(c, 40) == pytest.approx(4.51e-4, rel=0.01)
    with pytest.raises(BoundInapplicable):
        stash_bound(cfg_of(8, 256, 64), 40)


def test_stash_bound_binary_case():
    c = cfg_of(2, 32, 40)
    assert c.a == 20
    assert c.q == pytest.approx(32 * math.log(32 / 20) + 20 - 32 - 1 - math.log(2))


def test_multiplier_examples():
    m = analytical_multipliers(cfg_of(2, 16, 8, L=9), Variant.RING_BASELINE)
    assert m.access_count == pytest.approx(41.25)
    c = cfg_of(8, 256, 60, L=6, S=88)
    assert analytical_multipliers(c, Variant.FULL_BUCKET_READS).access_count == pytest.approx((1 + 2 / 60) * 7)
    assert (1 + 2 / 60) == pytest.approx(1.033, abs=1e-3)


def test_multiplier_step_formulas():
    c = cfg_of(2, 32, 45, L=9, S=67)
    Lh = 10
    base = analytical_multipliers(c, "ring-baseline")
    meta = analytical_multipliers(c, "local-meta")
    full = analytical_multipliers(c, "full-bucket")
    assert base.access_count == pytest.approx((2 + 33 / 45) * Lh)
    assert meta.access_count == pytest.approx((1 + 33 / 45) * Lh)
    assert full.access_count == pytest.approx((1 + 2 / 45) * Lh)
    assert base.bandwidth == meta.bandwidth == pytest.approx((1 + (64 + 67) / 45) * Lh)
    assert full.bandwidth == pytest.approx((1 + (64 + 134) / 45) * Lh)
    for m in (base, meta, full):
        assert m.access_count >= 1 and m.bandwidth >= 1


def test_depth_ratio_tends_to_three():
    # equal N, growing bucket size: the d=8 tree is ~3x shallower
    N = 8 ** 12
    r2 = plan(N, 64, 2, 4096)
    r8 = plan(N, 64, 8, 4096 * 7)
    ratio = (analytical_multipliers(r2, "full-bucket").access_count
             / analytical_multipliers(r8, "full-bucket").access_count)
    assert ratio == pytest.approx(3, rel=0.15)


def test_config_geometry():
    c = cfg_of(3, 4, 2, L=2)
    assert c.leaf_count == 9
    assert c.bucket_count == 13
    assert c.level_offsets() == [0, 1, 4]
    assert c.path(7) == [0, 3, 11]
    with pytest.raises(ValueError):
        c.path(9)
