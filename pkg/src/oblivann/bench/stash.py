"""Stash-occupancy Monte Carlo against the analytical tail bound, plus the bucket-load check."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..oram import BoundInapplicable, OramConfig, simulate, stash_bound


@dataclass
class TailRow:
    R: int
    empirical: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.empirical <= self.bound


@dataclass
class LoadCheck:
    target: float                 # A(d-1)/2
    means: np.ndarray             # time-averaged load per non-leaf bucket
    sigmas: np.ndarray
    write_means: np.ndarray       # load right after each eviction write
    write_sigmas: np.ndarray

    @property
    def max_mean(self) -> float:
        return float(self.means.max()) if self.means.size else 0.0

    @property
    def max_z(self) -> float:
        if not self.means.size:
            return 0.0
        return float(((self.means - self.target) / np.maximum(self.sigmas, 1e-12)).max())

    @property
    def violations(self) -> int:
        return int((self.means > self.target + 3 * self.sigmas).sum())

    @property
    def ok(self) -> bool:
        return self.violations == 0


@dataclass
class StashReport:
    config: OramConfig
    accesses: int
    seeds: list
    histogram: np.ndarray          # stash size right after each eviction, pooled over seeds
    rows: list = field(default_factory=list)
    reshuffle_rate: float = 0.0
    load: LoadCheck | None = None

    @property
    def tail_ok(self) -> bool:
        return all(r.ok for r in self.rows)


def simulate_stash(config: OramConfig, accesses: int, seeds=(0,), max_bound: float = 0.1, infinite: bool = True,
                   n_batches: int = 50) -> StashReport:
    """Round-robin load over all N blocks; tails compared for every R whose bound is below ``max_bound``."""
    seeds = list(seeds)
    hists = []
    resh = touches = 0
    for s in seeds:
        res = simulate(config, accesses, seed=s)
        hists.append(res.evict_histogram())
        resh += res.reshuffles
        touches += res.accesses * config.levels
    width = max((h.size for h in hists), default=0)
    hist = np.zeros(width, dtype=np.int64)
    for h in hists:
        hist[:h.size] += h
    rep = StashReport(config, accesses, seeds, hist, reshuffle_rate=resh / touches if touches else 0.0)
    total = int(hist.sum())
    if total:
        try:
            R = 0
            while True:
                b = stash_bound(config, R)
                if b < max_bound:
                    emp = float(hist[R + 1:].sum()) / total
                    rep.rows.append(TailRow(R, emp, b))
                    if emp == 0.0 and R >= width:
                        break
                R += 1
        except BoundInapplicable:
            pass
    if infinite and accesses:
        rep.load = bucket_load_check(config, accesses, seed=seeds[0] if seeds else 0, n_batches=n_batches)
    return rep


def bucket_load_check(config: OramConfig, accesses: int, seed: int = 0, n_batches: int = 50) -> LoadCheck:
    """Infinite-capacity run; compares every non-leaf bucket's time-averaged load to A(d-1)/2."""
    res = simulate(config, accesses, seed=seed, infinite=True, n_batches=n_batches)
    mean, sigma = res.time_avg_load()
    wm, ws = res.write_time_load()
    return LoadCheck(config.A * (config.d - 1) / 2.0, mean, sigma, wm, ws)
