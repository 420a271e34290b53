"""Ground truth, recall and I/O multiplier measurement."""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..blockstore import Cause, IoKind, IoTrace
from ..oram import Multipliers, OramConfig, TreeOram, Variant, analytical_multipliers


def brute_force_knn(vectors, queries, K: int) -> np.ndarray:
    """Exact L2 top-K per query, ties broken by the lower id."""
    X = np.ascontiguousarray(vectors, dtype=np.float32)
    Q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float32)
    if X.ndim != 2 or Q.shape[1] != X.shape[1]:
        raise ValueError(f"dimension mismatch: vectors {X.shape}, queries {Q.shape}")
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K must be in [1, {X.shape[0]}]")
    return kernels.knn(Q, X, int(K))[0]


def recall_at_k(results, truth, K: int) -> float:
    results = np.atleast_2d(np.asarray(results))
    truth = np.atleast_2d(np.asarray(truth))
    if results.shape[0] != truth.shape[0]:
        raise ValueError("result and truth query counts differ")
    if results.shape[0] == 0:
        return 0.0
    hits = 0
    for r, t in zip(results[:, :K], truth[:, :K]):
        hits += len(set(r.tolist()) & set(t.tolist()) - {-1})
    return hits / (K * results.shape[0])


def measure_multipliers(trace: IoTrace | None, logical_access_count: int, block_size: int) -> Multipliers:
    """Requests and bytes per logical access; bytes are normalised by ``block_size``.

    A ``None`` trace stands for a pass-through backend (one request and one block per access).
    Metadata reads count as requests but not as block transfers.
    """
    if logical_access_count <= 0:
        raise ValueError("logical_access_count must be positive")
    if trace is None:
        return Multipliers(1.0, 1.0)
    data = trace.kinds != IoKind.READ_META
    moved = int(trace.nbytes[data].sum())
    return Multipliers(trace.request_count / logical_access_count, moved / (logical_access_count * block_size))


def oram_multiplier_run(config: OramConfig, variant, accesses: int, seed: int = 0, write_fraction: float = 0.5) -> dict:
    """Random reads/writes on a freshly loaded ORAM; multipliers with and without early reshuffles.

    Bandwidth is expressed in slot units (sealed slot bytes), so it is directly
    comparable with the analytical block-transfer counts.
    """
    rng = np.random.default_rng(seed)
    oram = TreeOram(config, seed=seed, variant=variant)
    bs = config.block_size
    oram.setup_bulk({a: bytes(bs) for a in range(config.N)})
    oram.store.trace_reset()
    addrs = rng.integers(0, config.N, size=accesses)
    writes = rng.random(accesses) < write_fraction
    payload = bytes(bs)
    for a, w in zip(addrs.tolist(), writes.tolist()):
        if w:
            oram.write(a, payload)
        else:
            oram.read(a)
    tr = oram.store.trace_snapshot()
    slot = oram.key.slot_bytes
    core = measure_multipliers(tr.without(Cause.RESHUFFLE), accesses, slot)
    total = measure_multipliers(tr, accesses, slot)
    expect = analytical_multipliers(config, variant)
    return {
        "d": config.d, "Z": config.Z, "S": config.S, "A": config.A, "L": config.L, "N": config.N,
        "variant": Variant(variant).value, "accesses": accesses,
        "access_measured": core.access_count, "access_formula": expect.access_count,
        "bandwidth_measured": core.bandwidth, "bandwidth_formula": expect.bandwidth,
        "access_total": total.access_count, "bandwidth_total": total.bandwidth,
        "reshuffles": oram.stats["reshuffles"],
        "reshuffle_rate": oram.stats["reshuffles"] / (accesses * config.levels),
    }
