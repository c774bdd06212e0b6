"""Time the compiled SMO loop against the NumPy fallback.

    python benchmarks/bench_smo.py [--sizes 50,200,400] [--repeat 3]
"""
import argparse
import time

import numpy as np

from svfed import _backend, svdd


def bench(backend, K, c, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        beta, iters, _ = svdd.solve_dual(K, c, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, iters, beta


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", default="50,200,400")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--c", type=float, default=0.2)
    args = p.parse_args()
    backends = sorted(_backend.LOOPS)
    print(f"default backend: {_backend.BACKEND}; available: {', '.join(backends)}")
    print(f"{'n':>6} {'iters':>7} " + " ".join(f"{b + ' [s]':>12}" for b in backends) + "  speedup  identical")
    rng = np.random.default_rng(0)
    for n in (int(s) for s in args.sizes.split(",")):
        X = rng.random((n, 5))
        K = svdd.kernel_matrix(X, X, 1.0)
        c = max(args.c, 1.0 / n)
        res = {b: bench(b, K, c, args.repeat) for b in backends}
        times = [res[b][0] for b in backends]
        iters = res[backends[0]][1]
        same = all(np.array_equal(res[b][2], res[backends[0]][2]) for b in backends)
        speed = res["python"][0] / res["cython"][0] if "cython" in res else 1.0
        print(f"{n:>6} {iters:>7} " + " ".join(f"{t:>12.4f}" for t in times) + f"  {speed:>6.1f}x  {same}")


if __name__ == "__main__":
    main()
