"""Compare the numba and numpy kernel paths.

Times the three-layer forward and backward kernels and the fused Adam
update on both backends across batch sizes.  Run from the repo root:

    python benchmarks/bench_kernels.py [--hidden 256] [--repeats 200]
"""

import argparse
import time

import numpy as np

from sda_marl import kernels


def time_fn(fn, args, repeats):
    fn(*args)  # warm (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench(hidden, repeats):
    rng = np.random.default_rng(0)
    in_dim, out_dim = 48, 3
    w1 = rng.standard_normal((in_dim, hidden)) * 0.05
    b1 = rng.standard_normal(hidden) * 0.05
    w2 = rng.standard_normal((hidden, hidden)) * 0.05
    b2 = rng.standard_normal(hidden) * 0.05
    w3 = rng.standard_normal((hidden, out_dim)) * 0.05
    b3 = rng.standard_normal(out_dim) * 0.05

    backends = ["numpy"]
    if kernels.HAS_NUMBA:
        backends.append("numba")
    else:
        print("numba unavailable; timing numpy only")

    header = f"{'kernel':18s} {'batch':>6s}" + "".join(
        f" {name + ' (us)':>14s}" for name in backends)
    print(header)
    print("-" * len(header))

    for batch in (1, 32, 256, 1024):
        x = rng.standard_normal((batch, in_dim))
        row = {}
        for name in backends:
            fwd, bwd, adam = kernels.backend_functions(name)
            row[name] = time_fn(
                fwd, (x, w1, b1, w2, b2, w3, b3, True), repeats)
        print(f"{'forward':18s} {batch:6d}" + "".join(
            f" {1e6 * row[n]:14.2f}" for n in backends))

        h1, h2, y = kernels.mlp3_forward_np(x, w1, b1, w2, b2, w3, b3, True)
        dy = np.ones_like(y)
        for name in backends:
            fwd, bwd, adam = kernels.backend_functions(name)
            row[name] = time_fn(bwd, (x, h1, h2, y, w1, w2, w3, dy, True),
                                repeats)
        print(f"{'backward':18s} {batch:6d}" + "".join(
            f" {1e6 * row[n]:14.2f}" for n in backends))

    n = hidden * hidden
    p = rng.standard_normal(n)
    g = rng.standard_normal(n)
    m = np.zeros(n)
    v = np.zeros(n)
    for name in backends:
        fwd, bwd, adam = kernels.backend_functions(name)
        row[name] = time_fn(adam, (p, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8),
                            repeats)
    print(f"{'adam (' + str(n) + ')':18s} {'-':>6s}" + "".join(
        f" {1e6 * row[n]:14.2f}" for n in backends))

    # cross-backend agreement on a fresh forward/backward pair
    if kernels.HAS_NUMBA:
        x = rng.standard_normal((64, in_dim))
        a = kernels.mlp3_forward_np(x, w1, b1, w2, b2, w3, b3, True)
        b = kernels.mlp3_forward_nb(x, w1, b1, w2, b2, w3, b3, True)
        diff = max(np.max(np.abs(p - q)) for p, q in zip(a, b))
        print(f"\nmax forward disagreement numpy vs numba: {diff:.3e}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--hidden", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench(args.hidden, args.repeats)
