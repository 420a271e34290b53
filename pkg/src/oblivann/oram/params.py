"""Tree geometry, parameter planning and the closed-form cost and stash calculators."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from scipy.stats import poisson


class PlanningError(ValueError):
    pass


class BoundInapplicable(ValueError):
    """The stash bound needs q > 0."""


class Variant(str, Enum):
    """Which protocol optimizations are active.

    RING_BASELINE: metadata lives remotely (one metadata request per level per
    access) and evictions/reshuffles read Z individual slots.
    LOCAL_META: metadata is held by the client; eviction still reads slots.
    FULL_BUCKET_READS: local metadata plus single-request full-bucket reads on
    eviction and reshuffle.
    """
    RING_BASELINE = "ring-baseline"
    LOCAL_META = "local-meta"
    FULL_BUCKET_READS = "full-bucket"


@dataclass(frozen=True)
class OramConfig:
    d: int
    L: int
    Z: int
    S: int
    A: int
    N: int
    block_size: int

    def __post_init__(self):
        if self.d < 2:
            raise PlanningError("arity d must be >= 2")
        if self.L < 0 or self.Z < 1 or self.S < 1 or self.A < 1 or self.N < 1 or self.block_size < 1:
            raise PlanningError(f"invalid config {self}")

    @property
    def levels(self) -> int:
        return self.L + 1

    @property
    def leaf_count(self) -> int:
        return self.d ** self.L

    @property
    def bucket_count(self) -> int:
        return (self.d ** (self.L + 1) - 1) // (self.d - 1)

    @property
    def slots_per_bucket(self) -> int:
        return self.Z + self.S

    @property
    def a(self) -> float:
        return self.A * (self.d - 1) / 2

    @property
    def q(self) -> float:
        return q_value(self.d, self.Z, self.A)

    def level_offsets(self) -> list[int]:
        return [(self.d ** i - 1) // (self.d - 1) for i in range(self.L + 1)]

    def path(self, leaf: int) -> list[int]:
        """Bucket ids on the root-to-leaf path, root first."""
        if not 0 <= leaf < self.leaf_count:
            raise ValueError(f"leaf {leaf} out of range")
        d, L = self.d, self.L
        return [(d ** i - 1) // (d - 1) + leaf // d ** (L - i) for i in range(L + 1)]

    def with_(self, **kw) -> "OramConfig":
        return replace(self, **kw)


def q_value(d: int, Z: int, A: int) -> float:
    """q = Z ln(Z/a) + a - Z - 1 - ln d with a = A(d-1)/2."""
    a = A * (d - 1) / 2
    return Z * math.log(Z / a) + a - Z - 1 - math.log(d)


def depth_for(N: int, d: int, A: int) -> int:
    """Smallest L >= 0 with d^L * A(d-1)/2 >= N, i.e. ceil(log_d(2N / (A(d-1))))."""
    L = 0
    while d ** L * A * (d - 1) < 2 * N:
        L += 1
    return L


def dummy_slots_for(A: int, reshuffle_rate: float) -> int:
    """Smallest s with P[Poisson(A) > s] <= rate."""
    s = max(1, int(poisson.ppf(1.0 - reshuffle_rate, A)))
    while s > 1 and poisson.sf(s - 1, A) <= reshuffle_rate:
        s -= 1
    while poisson.sf(s, A) > reshuffle_rate:
        s += 1
    return s


def plan(N: int, block_size: int, d: int, Z: int, reshuffle_rate: float = 1e-3,
         A: int | None = None) -> OramConfig:
    """Pick A (largest with q > 0 unless given), S from the Poisson tail, then the depth."""
    if d < 2:
        raise PlanningError("arity d must be >= 2")
    if Z < 1:
        raise PlanningError("Z must be >= 1")
    if not 0 < reshuffle_rate < 1:
        raise PlanningError("reshuffle_rate must be in (0, 1)")
    if N < 1 or block_size < 1:
        raise PlanningError("N and block_size must be positive")
    if A is None:
        A = 2 * Z // (d - 1)
        while A >= 1 and q_value(d, Z, A) <= 0:
            A -= 1
        if A < 1:
            raise PlanningError(f"no eviction period gives q > 0 for d={d}, Z={Z}")
    elif A < 1:
        raise PlanningError("A must be >= 1")
    S = dummy_slots_for(A, reshuffle_rate)
    return OramConfig(d=d, L=depth_for(N, d, A), Z=Z, S=S, A=A, N=N, block_size=block_size)


def reverse_digits(x: int, d: int, L: int) -> int:
    if d < 2 or L < 0:
        raise ValueError("need d >= 2 and L >= 0")
    if not 0 <= x < d ** L:
        raise ValueError(f"x={x} outside [0, {d ** L})")
    out = 0
    for _ in range(L):
        x, r = divmod(x, d)
        out = out * d + r
    return out


def eviction_leaf(ordinal: int, d: int, L: int) -> int:
    """Leaf evicted by the ``ordinal``-th eviction (1-based; ordinal = G / A after the increment)."""
    return reverse_digits(ordinal % d ** L, d, L)


def stash_bound(config: OramConfig, R: int) -> float:
    """Upper bound on P[stash > R] for the d-ary tree."""
    q = config.q
    if q <= 0:
        raise BoundInapplicable(f"q = {q:.4g} <= 0 for d={config.d}, Z={config.Z}, A={config.A}")
    return math.exp(R * math.log(config.a / config.Z)) / (1.0 - math.exp(-q))


@dataclass(frozen=True)
class Multipliers:
    access_count: float
    bandwidth: float


def analytical_multipliers(config: OramConfig, variant: Variant | str) -> Multipliers:
    """Expected requests and block transfers per logical access, ignoring early reshuffles."""
    variant = Variant(variant)
    Lh, Z, S, A = config.levels, config.Z, config.S, config.A
    if variant is Variant.RING_BASELINE:
        return Multipliers((2 + (Z + 1) / A) * Lh, (1 + (2 * Z + S) / A) * Lh)
    if variant is Variant.LOCAL_META:
        return Multipliers((1 + (Z + 1) / A) * Lh, (1 + (2 * Z + S) / A) * Lh)
    return Multipliers((1 + 2 / A) * Lh, (1 + (2 * Z + 2 * S) / A) * Lh)


def reshuffle_costs(config: OramConfig, variant: Variant | str) -> tuple[int, int]:
    """(requests, slot transfers) of one early reshuffle of one bucket."""
    variant = Variant(variant)
    Z, S = config.Z, config.S
    if variant is Variant.FULL_BUCKET_READS:
        return 2, 2 * (Z + S)
    return Z + 1, Z + (Z + S)
