"""Time the numba and pure-numpy variants of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

The first numba call (compilation or cache load) is reported separately and
excluded from the steady-state timings. Outputs of the two variants are
checked for agreement before timing.
"""

import argparse
import time

import numpy as np

from drlpdid import kernels


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(scale: float, rng: np.random.Generator):
    N, T = int(5000 * scale), 20
    ft = rng.choice(np.r_[0, np.arange(8, 16)], size=N).astype(np.int64)
    Y = rng.normal(size=(N, T))
    yield "stack_rows", (ft, Y, np.arange(8, 16, dtype=np.int64), 3,
                         np.array([1], dtype=np.int64), np.array([1.0]))

    n, p, C = int(200_000 * scale), 8, int(2000 * scale)
    yield "cluster_sums", (rng.normal(size=(n, p)), rng.integers(0, C, n).astype(np.int64), C)

    B, C, H = 1024, int(2000 * scale), 7
    xi = rng.choice([-1.0, 1.0], size=(B, C))
    yield "sup_t", (xi, rng.normal(size=(C, H)) / C, np.ones(H))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba unavailable (or disabled); only the numpy variants exist")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'first numba':>13}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, a in cases(args.scale, rng):
        fnb = getattr(kernels, f"{name}_numba")
        fnp = getattr(kernels, f"{name}_numpy")
        t0 = time.perf_counter()
        out_nb = fnb(*a)
        first = time.perf_counter() - t0
        out_np = fnp(*a)
        for x, y in zip(out_nb if isinstance(out_nb, tuple) else (out_nb,),
                        out_np if isinstance(out_np, tuple) else (out_np,)):
            np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
        t_nb = _best(fnb, a, args.repeat)
        t_np = _best(fnp, a, args.repeat)
        print(f"{name:<14}{first * 1e3:>11.1f}ms{t_nb * 1e3:>10.2f}ms{t_np * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
