"""Compare the compiled pricing kernel against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--sizes 8,10,12] [--trials 5]
"""

import argparse
import time

import numpy as np

from gclr import exact, kernels, synth


def bench_one(I, K, seed, trials):
    cfg = synth.SyntheticConfig(I=I, K=K, seed=seed, n=2)
    ds = synth.gen_type1(cfg).dataset
    problem = exact.UnitProblem.from_dataset(ds)
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        pi = rng.normal(0.0, 2e5, size=I)
        args = (problem.G, problem.b, problem.yy, problem.weights, pi, ds.n)
        t0 = time.perf_counter()
        m_py, v_py, n_py = kernels.pricing_bnb_py(*args)
        t_py = time.perf_counter() - t0
        if kernels.HAVE_COMPILED:
            t0 = time.perf_counter()
            m_c, v_c, n_c = kernels._speedups.pricing_bnb(
                np.ascontiguousarray(problem.G), np.ascontiguousarray(problem.b),
                np.ascontiguousarray(problem.yy),
                np.ascontiguousarray(problem.weights, dtype=np.int64),
                np.ascontiguousarray(pi, dtype=float),
                ds.n, np.inf, np.empty(0, dtype=np.int64))
            t_c = time.perf_counter() - t0
            assert sorted(m_c) == sorted(m_py), "backends disagree on the optimal subset"
            assert abs(v_c - v_py) <= 1e-6 * max(1.0, abs(v_py))
        else:
            t_c, n_c = float("nan"), 0
        rows.append((t_py, t_c, n_py))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="8,10,12")
    ap.add_argument("--trials", type=int, default=5)
    args = ap.parse_args()

    print(f"backend available: {kernels.kernel_backend()}")
    print(f"{'I':>4} {'python (ms)':>12} {'compiled (ms)':>14} {'speedup':>8} {'nodes':>8}")
    for I in (int(s) for s in args.sizes.split(",")):
        rows = bench_one(I, K=2, seed=I, trials=args.trials)
        t_py = 1000 * np.median([r[0] for r in rows])
        t_c = 1000 * np.median([r[1] for r in rows])
        nodes = int(np.median([r[2] for r in rows]))
        speed = t_py / t_c if t_c == t_c and t_c > 0 else float("nan")
        print(f"{I:>4} {t_py:>12.2f} {t_c:>14.2f} {speed:>8.1f} {nodes:>8}")


if __name__ == "__main__":
    main()
