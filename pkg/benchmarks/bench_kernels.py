"""Time the compiled and numpy HDBSCAN kernels on the same data and check they agree bit for bit.

    python benchmarks/bench_kernels.py --n 2000 4000 --dim 128
"""
import argparse
import time

import numpy as np

from trackmine.discovery import _backend
from trackmine.discovery.hdbscan import METRICS


def run(kernels, X, k, metric):
    t0 = time.perf_counter()
    core = kernels.core_distances(X, k, metric)
    t1 = time.perf_counter()
    src, dst, w = kernels.prim_mst(X, core, metric)
    t2 = time.perf_counter()
    Z = kernels.single_linkage(src, dst, w, len(X))
    t3 = time.perf_counter()
    return (core, src, dst, w, Z), (t1 - t0, t2 - t1, t3 - t2)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 2000, 4000])
    ap.add_argument("--dim", type=int, default=128)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--metric", choices=sorted(METRICS), default="euclidean")
    ap.add_argument("--repeat", type=int, default=3, help="best-of repetitions per backend")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = _backend.available()
    metric = METRICS[args.metric]
    print(f"backends: {', '.join(names)}; dim={args.dim} k={args.k} metric={args.metric}")
    print(f"{'n':>7} {'backend':>8} {'core s':>8} {'mst s':>8} {'link s':>8} {'total s':>8} {'speedup':>8}")
    for n in args.n:
        rng = np.random.default_rng(args.seed)
        X = rng.normal(0, 1, (n, args.dim)).astype(np.float32)
        if metric == METRICS["cosine"]:
            X /= np.linalg.norm(X, axis=1, keepdims=True)
        results, best = {}, {}
        for name in names:
            kernels = _backend.load(name)
            for _ in range(args.repeat):
                out, times = run(kernels, X, args.k, metric)
                if name not in best or sum(times) < sum(best[name]):
                    best[name] = times
            results[name] = out
        base = sum(best["python"]) if "python" in best else None
        for name in names:
            core, mst, link = best[name]
            total = core + mst + link
            speed = f"{base / total:.1f}x" if base else "-"
            print(f"{n:>7} {name:>8} {core:>8.3f} {mst:>8.3f} {link:>8.3f} {total:>8.3f} {speed:>8}")
        if len(results) == 2:
            same = all(np.array_equal(a, b) for a, b in zip(results["cython"], results["python"]))
            print(f"{n:>7} outputs identical across backends: {same}")


if __name__ == "__main__":
    main()
