"""Command-line harness. Every subcommand writes CSV (header row first) to --out or stdout.

Exit status is 0 iff every check the subcommand performs passes.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time

import numpy as np

from .. import backend_name, pq
from ..engine import Engine, SearchParams, StorageParams, load_config
from ..engine.config import EngineConfig
from ..graph import PackedIndex, build, load_graph, pack, save_graph
from ..oram import Variant, analytical_multipliers, plan
from .audit import EngineFactory, audit_obliviousness
from .datasets import gen_dataset, read_ivecs, read_vectors, write_ivecs
from .metrics import brute_force_knn, oram_multiplier_run, recall_at_k
from .stash import simulate_stash

log = logging.getLogger("oblivann")


def _emit(rows: list[dict], out: str | None) -> None:
    if not rows:
        return
    fields = list(rows[0].keys())
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if out:
            fh.close()


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _index_paths(prefix: str) -> dict:
    return {"graph": prefix + ".graph.npz", "ht": prefix + ".ht.pq", "hp": prefix + ".hp.pq", "packed": prefix}


def _need(cfg: EngineConfig, attr: str) -> str:
    val = getattr(cfg, attr)
    if not val:
        raise SystemExit(f"config is missing [data] {attr}")
    return val


# ---------------------------------------------------------------------------- subcommands
def cmd_gen_data(a) -> int:
    X = gen_dataset(a.out_vectors, a.n, a.dims, a.distribution, a.seed, centers=a.centers, spread=a.spread)
    rows = [{"path": a.out_vectors, "n": a.n, "dims": a.dims, "distribution": a.distribution, "seed": a.seed}]
    if a.queries:
        Q = gen_dataset(a.queries, a.n_queries, a.dims, a.distribution, a.seed + 1, centers=a.centers,
                        spread=a.spread)
        rows.append({"path": a.queries, "n": a.n_queries, "dims": a.dims, "distribution": a.distribution,
                     "seed": a.seed + 1})
        if a.truth and a.n and a.n_queries:
            write_ivecs(a.truth, brute_force_knn(X, Q, min(a.k, a.n)))
            rows.append({"path": a.truth, "n": a.n_queries, "dims": min(a.k, a.n), "distribution": "ground-truth",
                         "seed": ""})
    _emit(rows, a.out)
    return 0


def cmd_build_index(a) -> int:
    cfg = load_config(a.config)
    X = read_vectors(_need(cfg, "vectors"))
    t = time.perf_counter()
    g = build(X, cfg.build)
    elapsed = time.perf_counter() - t
    paths = _index_paths(_need(cfg, "index"))
    os.makedirs(os.path.dirname(paths["graph"]) or ".", exist_ok=True)
    save_graph(g, paths["graph"])
    deg = g.deg[g.present]
    reach = g.reachable_from_start()[g.present].mean()
    _emit([{"n": X.shape[0], "dims": X.shape[1], "max_degree": cfg.build.max_degree, "alpha": cfg.build.alpha,
            "mean_degree": float(deg.mean()), "reachable_fraction": float(reach), "seconds": elapsed}], a.out)
    return 0 if reach == 1.0 else 1


def cmd_pack_index(a) -> int:
    cfg = load_config(a.config)
    paths = _index_paths(_need(cfg, "index"))
    g = load_graph(paths["graph"])
    X = g.vectors[g.present]
    cb_t = pq.train(X, cfg.traversal_hint_bytes, seed=cfg.seed, iters=cfg.pq_iters)
    cb_p = pq.train(X, cfg.pruning_hint_bytes, seed=cfg.seed + 1, iters=cfg.pq_iters) if cfg.pruning_hint_bytes else None
    packed = pack(g, cb_p, block_size=a.block_size)
    packed.save(paths["packed"])
    cb_t.save(paths["ht"])
    if cb_p is not None:
        cb_p.save(paths["hp"])
    _emit([{"n": packed.n, "traversal_block_bytes": packed.traversal_block_size,
            "refinement_block_bytes": packed.refinement_block_size, "hint_bytes": packed.hint_bytes,
            "traversal_hint_mse": cb_t.train_mse[-1] if cb_t.train_mse else "",
            "pruning_hint_mse": cb_p.train_mse[-1] if cb_p is not None and cb_p.train_mse else ""}], a.out)
    return 0


def _load_index(cfg: EngineConfig):
    paths = _index_paths(_need(cfg, "index"))
    packed = PackedIndex.load(paths["packed"])
    cb_t = pq.PqCodebook.load(paths["ht"])
    cb_p = pq.PqCodebook.load(paths["hp"]) if os.path.exists(paths["hp"]) else None
    return packed, cb_t, cb_p


def cmd_setup(a) -> int:
    cfg = load_config(a.config)
    packed, cb_t, cb_p = _load_index(cfg)
    t = time.perf_counter()
    eng = Engine.setup(packed, cb_t, cb_p, cfg.search, cfg.storage, cfg.update)
    elapsed = time.perf_counter() - t
    eng.save(a.engine_dir)
    rows = []
    for dev in (eng.trav, eng.refine):
        c = dev.oram.config
        rows.append({"device": dev.name, "d": c.d, "Z": c.Z, "S": c.S, "A": c.A, "L": c.L, "N": c.N,
                     "block_bytes": c.block_size, "disk_bytes": dev.store.geometry.total_bytes, "q": c.q,
                     "seconds": elapsed})
    _emit(rows, a.out)
    return 0


def cmd_search_bench(a) -> int:
    cfg = load_config(a.config)
    Q = read_vectors(_need(cfg, "queries"))
    if a.limit:
        Q = Q[:a.limit]
    truth = read_ivecs(cfg.truth)[:Q.shape[0]] if cfg.truth and os.path.exists(cfg.truth) else None
    if truth is None:
        log.info("no ground truth file; computing brute force")
        truth = brute_force_knn(read_vectors(_need(cfg, "vectors")), Q, cfg.search.K)
    sp = cfg.search
    sweep = _ints(a.l_prune) if a.l_prune else [sp.L_prune]
    rows, ok = [], True
    engine = None
    if a.engine_dir:
        engine = Engine.load(a.engine_dir)
    else:
        packed, cb_t, cb_p = _load_index(cfg)
        storage = cfg.storage if a.backend is None else StorageParams(**{**cfg.storage.__dict__, "backend": a.backend})
        engine = Engine.setup(packed, cb_t, cb_p, sp, storage, cfg.update)
    for lp in sweep:
        engine.params = SearchParams(K=sp.K, L_cand=sp.L_cand, L_prune=lp, W=sp.W)
        engine.reset_io()
        t = time.perf_counter()
        res = np.stack([engine.search(q) for q in Q])
        elapsed = time.perf_counter() - t
        rep = engine.io_report()
        rec = recall_at_k(res, truth, sp.K)
        rows.append({"K": sp.K, "L_cand": sp.L_cand, "L_prune": lp, "W": sp.W, "queries": Q.shape[0],
                     "recall": rec, "ms_per_query": 1e3 * elapsed / max(Q.shape[0], 1),
                     "traversal_accesses": rep["traversal_accesses"], "refinement_accesses": rep["refinement_accesses"],
                     "ann_bytes": rep["ann_bytes"], "coupled_bytes": rep["coupled_equivalent_bytes"],
                     "measured_ratio": rep["measured_ratio"], "closed_form_ratio": rep["closed_form_ratio"],
                     "oram_bytes": rep.get("oram_traversal_bytes", 0) + rep.get("oram_refinement_bytes", 0)})
        if a.min_recall is not None and rec < a.min_recall:
            ok = False
    _emit(rows, a.out)
    return 0 if ok else 1


def cmd_oram_bench(a) -> int:
    rows = []
    for d in _ints(a.d):
        for Z in _ints(a.Z):
            cfg = plan(a.N, a.block_size, d, Z, a.reshuffle_rate)
            for v in (a.variant.split(",") if a.variant else [x.value for x in Variant]):
                t = time.perf_counter()
                r = oram_multiplier_run(cfg, v, a.accesses, a.seed)
                r["us_per_access"] = 1e6 * (time.perf_counter() - t) / a.accesses
                rows.append(r)
    ok = all(abs(r["access_measured"] / r["access_formula"] - 1) <= 0.05
             and abs(r["bandwidth_measured"] / r["bandwidth_formula"] - 1) <= 0.05 for r in rows)
    _emit(rows, a.out)
    return 0 if ok else 1


def cmd_simulate_stash(a) -> int:
    cfg = plan(a.N, a.block_size, a.d, a.Z, a.reshuffle_rate)
    rep = simulate_stash(cfg, a.accesses, seeds=range(a.seed, a.seed + a.seeds), infinite=not a.no_load_check,
                         n_batches=a.batches)
    rows = [{"kind": "tail", "R": r.R, "empirical": r.empirical, "bound": r.bound, "ok": int(r.ok)} for r in rep.rows]
    rows.append({"kind": "reshuffle_rate", "R": "", "empirical": rep.reshuffle_rate, "bound": a.reshuffle_rate,
                 "ok": int(rep.reshuffle_rate <= 2 * a.reshuffle_rate)})
    if rep.load is not None:
        rows.append({"kind": "max_time_avg_load", "R": "", "empirical": rep.load.max_mean,
                     "bound": rep.load.target, "ok": int(rep.load.ok)})
        rows.append({"kind": "max_load_z", "R": "", "empirical": rep.load.max_z, "bound": 3.0, "ok": int(rep.load.ok)})
    _emit(rows, a.out)
    return 0 if all(r["ok"] for r in rows) else 1


def cmd_audit(a) -> int:
    cfg = load_config(a.config)
    packed, cb_t, cb_p = _load_index(cfg)
    qa = read_vectors(a.queries_a)
    qb = read_vectors(a.queries_b)
    n = min(len(qa), len(qb)) if a.limit is None else a.limit
    storage = StorageParams(**{**cfg.storage.__dict__, "leaky": a.leaky, "backend": "oram"})
    fac = EngineFactory(packed, cb_t, cb_p, cfg.search, storage)
    rep = audit_obliviousness(fac, qa[:n], qb[:n], range(a.seed, a.seed + a.seeds))
    _emit([{"check": name, "detail": detail, "passed": int(ok)} for name, detail, ok in rep.rows()]
          + [{"check": "overall", "detail": f"leaky={a.leaky}", "passed": int(rep.passed)}], a.out)
    return 0 if rep.passed else 1


def cmd_report(a) -> int:
    """Closed-form planner output, multipliers and the bandwidth ratio for a parameter grid."""
    rows = []
    for d in _ints(a.d):
        for Z in _ints(a.Z):
            cfg = plan(a.N, a.block_size, d, Z, a.reshuffle_rate)
            for v in Variant:
                m = analytical_multipliers(cfg, v)
                rows.append({"d": d, "Z": Z, "A": cfg.A, "S": cfg.S, "L": cfg.L, "q": cfg.q, "variant": v.value,
                             "access_multiplier": m.access_count, "bandwidth_multiplier": m.bandwidth})
    _emit(rows, a.out)
    return 0


# ---------------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oblivann", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--out", default=None, help="CSV output path (default stdout)")
        return sp

    g = add("gen-data", cmd_gen_data, "generate synthetic fvecs data (and optional queries + ground truth)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dims", type=int, required=True)
    g.add_argument("--distribution", default="uniform", choices=["uniform", "gmm"])
    g.add_argument("--centers", type=int, default=10)
    g.add_argument("--spread", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out-vectors", required=True)
    g.add_argument("--queries", default=None)
    g.add_argument("--n-queries", type=int, default=100)
    g.add_argument("--truth", default=None)
    g.add_argument("--k", type=int, default=10)

    b = add("build-index", cmd_build_index, "build the proximity graph")
    b.add_argument("--config", required=True)

    k = add("pack-index", cmd_pack_index, "train hint codebooks and pack traversal/refinement blocks")
    k.add_argument("--config", required=True)
    k.add_argument("--block-size", type=int, default=None)

    s = add("setup", cmd_setup, "load the packed index into both ORAMs and persist the engine")
    s.add_argument("--config", required=True)
    s.add_argument("--engine-dir", required=True)

    q = add("search-bench", cmd_search_bench, "run queries, report recall and I/O")
    q.add_argument("--config", required=True)
    q.add_argument("--engine-dir", default=None)
    q.add_argument("--backend", choices=["oram", "plain"], default=None)
    q.add_argument("--l-prune", default=None, help="comma-separated L_prune sweep")
    q.add_argument("--limit", type=int, default=None)
    q.add_argument("--min-recall", type=float, default=None)

    o = add("oram-bench", cmd_oram_bench, "measure ORAM multipliers against the closed forms")
    o.add_argument("--N", type=int, default=8192)
    o.add_argument("--d", default="2,8")
    o.add_argument("--Z", default="32")
    o.add_argument("--variant", default=None)
    o.add_argument("--block-size", type=int, default=64)
    o.add_argument("--reshuffle-rate", type=float, default=1e-3)
    o.add_argument("--accesses", type=int, default=10000)
    o.add_argument("--seed", type=int, default=0)

    m = add("simulate-stash", cmd_simulate_stash, "metadata-only stash Monte Carlo vs the tail bound")
    m.add_argument("--N", type=int, default=8192)
    m.add_argument("--d", type=int, default=8)
    m.add_argument("--Z", type=int, default=256)
    m.add_argument("--block-size", type=int, default=64)
    m.add_argument("--reshuffle-rate", type=float, default=1e-3)
    m.add_argument("--accesses", type=int, default=10 ** 6)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--seeds", type=int, default=1)
    m.add_argument("--batches", type=int, default=50)
    m.add_argument("--no-load-check", action="store_true")

    u = add("audit", cmd_audit, "two-workload obliviousness audit")
    u.add_argument("--config", required=True)
    u.add_argument("--queries-a", required=True)
    u.add_argument("--queries-b", required=True)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--seeds", type=int, default=30)
    u.add_argument("--limit", type=int, default=None)
    u.add_argument("--leaky", action="store_true", help="negative control: skip dummy reads")

    r = add("report", cmd_report, "closed-form planner and multiplier table")
    r.add_argument("--N", type=int, default=8192)
    r.add_argument("--d", default="2,4,8")
    r.add_argument("--Z", default="32,256")
    r.add_argument("--block-size", type=int, default=64)
    r.add_argument("--reshuffle-rate", type=float, default=1e-3)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", backend_name())
    try:
        return args.fn(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
