"""Time the hot kernels with numba enabled and disabled.

Each mode runs in its own subprocess because the backend is chosen at import
time from OBLIVANN_DISABLE_NUMBA. Output is CSV: kernel, backend, seconds, speedup.

    python benchmarks/bench_kernels.py [--repeat 5] [--out kernels.csv]
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time

CHILD = r"""
import json, sys, time
import numpy as np
from oblivann import backend_name, kernels, pq
from oblivann.oram import plan, simulate

rep = int(sys.argv[1])
rng = np.random.default_rng(0)
X = rng.random((20000, 32), dtype=np.float32)
Q = rng.random((50, 32), dtype=np.float32)
q = Q[0]
cb = pq.train(X[:4000], 16, k_c=64, iters=2, seed=0)
codes = cb.encode(X)
table = cb.adc_table(q)
R = 32
adj = rng.integers(0, X.shape[0], size=(X.shape[0], R)).astype(np.int32)
deg = np.full(X.shape[0], R, dtype=np.int32)
seen = np.zeros(X.shape[0], dtype=np.int64)
cand = np.arange(512, dtype=np.int64)
cd = kernels.sq_dists_to(np.ascontiguousarray(X[:512]), q)
cfg = plan(4096, 64, 2, 8)
stamp = [0]

def gs():
    stamp[0] += 1
    kernels.greedy_search(X, adj, deg, 0, q, 64, seen, stamp[0])

cases = {
    "sq_dists_to": lambda: kernels.sq_dists_to(X, q),
    "knn": lambda: kernels.knn(Q, X, 10),
    "nearest_centroid": lambda: kernels.nearest_centroid(np.ascontiguousarray(X[:, :2]), cb.centroids[0]),
    "adc_distances": lambda: kernels.adc_distances(table, codes),
    "greedy_search": gs,
    "robust_prune": lambda: kernels.robust_prune(X, q, cand, cd, 1.01, R),
    "stash_sim_1e5": lambda: simulate(cfg, 100000, seed=1),
}
out = {}
for name, fn in cases.items():
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(rep):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps({"backend": backend_name(), "times": out}))
"""


def run(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("OBLIVANN_DISABLE_NUMBA", None)
    if disable:
        env["OBLIVANN_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--out", default=None)
    a = ap.parse_args(argv)
    t0 = time.perf_counter()
    fast = run(False, a.repeat)
    slow = run(True, a.repeat)
    rows = []
    for k in fast["times"]:
        rows.append({"kernel": k, "backend": fast["backend"], "seconds": f"{fast['times'][k]:.6f}",
                     "speedup": f"{slow['times'][k] / fast['times'][k]:.2f}"})
        rows.append({"kernel": k, "backend": slow["backend"], "seconds": f"{slow['times'][k]:.6f}", "speedup": "1.00"})
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    w = csv.DictWriter(fh, fieldnames=["kernel", "backend", "seconds", "speedup"], lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if a.out:
        fh.close()
    print(f"# total {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
