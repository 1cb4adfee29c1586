"""Backend shootout for the two kernel families.

Times the numba and numpy implementations of the convolution kernels and
the ray marcher on shapes representative of actual use (training-scale
conv stacks, a 64 px render's worth of rays), checks both backends agree,
and prints a table. The MVC_BACKEND=auto split (numpy convs, numba
marching) follows these numbers; rerun after touching either backend.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import sys
import time

import numpy as np

from mvdiffuse.kernels import get_impl


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(repeat):
    rng = np.random.default_rng(7)
    cases = [
        ("conv 1x3x64x192 k4s2 c64", (1, 3, 64, 192), (64, 3, 4, 4), 2, 1),
        ("conv 1x64x32x96 k4s2 c128", (1, 64, 32, 96), (128, 64, 4, 4), 2, 1),
        ("conv 1x128x16x48 k3s1 c128", (1, 128, 16, 48), (128, 128, 3, 3), 1, 1),
    ]
    rows = []
    for name, xs, ws, stride, pad in cases:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        impls = {}
        for backend in ("numpy", "numba"):
            impl = get_impl("conv", backend)
            impl.conv2d_fwd(x, w, stride, pad)  # warm the jit
            impls[backend] = _time(lambda: impl.conv2d_fwd(x, w, stride, pad),
                                   repeat)
        ya = get_impl("conv", "numpy").conv2d_fwd(x, w, stride, pad)
        yb = get_impl("conv", "numba").conv2d_fwd(x, w, stride, pad)
        # float32 accumulation order differs between BLAS and the scalar
        # loops; exact parity is checked in float64 by the test suite
        agree = np.allclose(ya, yb, rtol=1e-3, atol=1e-3)
        rows.append((name, impls["numpy"], impls["numba"], agree))
    return rows


def bench_march(repeat):
    rng = np.random.default_rng(11)
    n = 64 * 64 * 4  # one 64 px view's primary rays
    origins = np.tile(np.array([0.0, 0.0, 3.0]), (n, 1))
    dirs = rng.normal(size=(n, 3))
    dirs[:, 2] -= 2.0
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t0 = np.full(n, 1.5)
    t1 = np.full(n, 4.5)
    shapes = [
        ("march sphere", 0, np.array([1.0])),
        ("march torus", 1, np.array([0.8, 0.25])),
        ("march bumpy", 3, np.concatenate([
            [0.9, 0.05, 2.0],
            [0.0, 1.0, 0.0, 7.0, 0.3],
            [1.0, 0.0, 0.0, 9.0, 1.1],
        ])),
    ]
    rows = []
    for name, code, params in shapes:
        impls = {}
        for backend in ("numpy", "numba"):
            impl = get_impl("march", backend)
            impl.raymarch(origins[:64], dirs[:64], code, params, t0[:64], t1[:64])
            impls[backend] = _time(
                lambda: impl.raymarch(origins, dirs, code, params, t0, t1),
                repeat)
        ta, ha = get_impl("march", "numpy").raymarch(origins, dirs, code,
                                                     params, t0, t1)
        tb, hb = get_impl("march", "numba").raymarch(origins, dirs, code,
                                                     params, t0, t1)
        agree = bool(np.array_equal(ha, hb)
                     and np.allclose(ta[ha], tb[hb], atol=1e-6))
        rows.append((name, impls["numpy"], impls["numba"], agree))
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rows = bench_conv(args.repeat) + bench_march(args.repeat)
    print(f"{'case':34} {'numpy':>10} {'numba':>10} {'ratio':>7}  agree")
    ok = True
    for name, tn, tb, agree in rows:
        ratio = tn / tb if tb > 0 else float("inf")
        print(f"{name:34} {tn * 1e3:9.2f}ms {tb * 1e3:9.2f}ms {ratio:6.2f}x"
              f"  {'yes' if agree else 'NO'}")
        ok &= agree
    if not ok:
        print("backends disagree", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
