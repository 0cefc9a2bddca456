#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Runs every hot kernel (conv3x3 forward/backward, maxpool2x2, bilinear x2)
on training-representative shapes in both backends, checks numerical parity,
and prints a timing table with speedups. Shapes mirror the 32x32 backbone at
desk width (base 16) and paper width (base 64).

Usage:
    python benchmarks/kernel_bench.py [--repeats 20] [--dtype float32]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from latentguard import kernels_numba, kernels_numpy

# (batch, cin, cout, spatial) stages of the encoder at two widths
CONV_SHAPES = [
    (64, 1, 16, 32), (64, 16, 32, 16), (64, 32, 64, 8), (64, 64, 128, 4),
    (64, 1, 64, 32), (64, 64, 128, 16), (64, 128, 256, 8), (64, 256, 512, 4),
]
POOL_SHAPES = [(64, 16, 32), (64, 64, 32), (64, 128, 16)]
UP_SHAPES = [(64, 128, 4), (64, 64, 8), (64, 32, 16)]


def _time(fn, repeats: int) -> float:
    fn()  # warm-up / jit compile
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench(repeats: int, dtype) -> None:
    rng = np.random.default_rng(0)
    rows = []
    atol = 1e-4 if dtype == np.float32 else 1e-9

    for n, ci, co, hw in CONV_SHAPES:
        x = rng.random((n, ci, hw, hw)).astype(dtype)
        w = rng.standard_normal((co, ci, 3, 3)).astype(dtype)
        b = rng.standard_normal(co).astype(dtype)
        dy = rng.standard_normal((n, co, hw, hw)).astype(dtype)
        label = f"conv3x3 {ci:>3}->{co:<3} @{hw}x{hw}"
        out_np = kernels_numpy.conv3x3_forward(x, w, b)
        out_nb = kernels_numba.conv3x3_forward(x, w, b)
        assert np.allclose(out_np, out_nb, atol=atol), label
        t_np = _time(lambda: kernels_numpy.conv3x3_forward(x, w, b), repeats)
        t_nb = _time(lambda: kernels_numba.conv3x3_forward(x, w, b), repeats)
        rows.append((label + " fwd", t_np, t_nb))
        t_np = _time(lambda: kernels_numpy.conv3x3_input_grad(dy, w), repeats)
        t_nb = _time(lambda: kernels_numba.conv3x3_input_grad(dy, w), repeats)
        rows.append((label + " bwd-in", t_np, t_nb))
        t_np = _time(lambda: kernels_numpy.conv3x3_param_grad(dy, x), repeats)
        t_nb = _time(lambda: kernels_numba.conv3x3_param_grad(dy, x), repeats)
        rows.append((label + " bwd-w", t_np, t_nb))

    for n, c, hw in POOL_SHAPES:
        x = rng.random((n, c, hw, hw)).astype(dtype)
        y_np, i_np = kernels_numpy.maxpool2x2_forward(x)
        y_nb, i_nb = kernels_numba.maxpool2x2_forward(x)
        assert np.array_equal(y_np, y_nb) and np.array_equal(i_np, i_nb)
        label = f"maxpool2x2 c{c:<3} @{hw}x{hw}"
        t_np = _time(lambda: kernels_numpy.maxpool2x2_forward(x), repeats)
        t_nb = _time(lambda: kernels_numba.maxpool2x2_forward(x), repeats)
        rows.append((label + " fwd", t_np, t_nb))
        dy = rng.standard_normal(y_np.shape).astype(dtype)
        t_np = _time(lambda: kernels_numpy.maxpool2x2_backward(dy, i_np), repeats)
        t_nb = _time(lambda: kernels_numba.maxpool2x2_backward(dy, i_np), repeats)
        rows.append((label + " bwd", t_np, t_nb))

    for n, c, hw in UP_SHAPES:
        x = rng.random((n, c, hw, hw)).astype(dtype)
        u_np = kernels_numpy.bilinear_up2_forward(x)
        u_nb = kernels_numba.bilinear_up2_forward(x)
        assert np.allclose(u_np, u_nb, atol=atol)
        label = f"bilinear_up2 c{c:<3} @{hw}x{hw}"
        t_np = _time(lambda: kernels_numpy.bilinear_up2_forward(x), repeats)
        t_nb = _time(lambda: kernels_numba.bilinear_up2_forward(x), repeats)
        rows.append((label + " fwd", t_np, t_nb))
        dy = rng.standard_normal(u_np.shape).astype(dtype)
        t_np = _time(lambda: kernels_numpy.bilinear_up2_backward(dy), repeats)
        t_nb = _time(lambda: kernels_numba.bilinear_up2_backward(dy), repeats)
        rows.append((label + " bwd", t_np, t_nb))

    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numpy ms':>9}  {'numba ms':>9}  {'speedup':>7}")
    print("-" * (width + 31))
    for label, t_np, t_nb in rows:
        print(f"{label:<{width}}  {t_np * 1e3:>9.3f}  {t_nb * 1e3:>9.3f}  {t_np / t_nb:>6.2f}x")
    geo = np.exp(np.mean([np.log(t_np / t_nb) for _, t_np, t_nb in rows]))
    print("-" * (width + 31))
    print(f"geometric-mean speedup (numba over numpy): {geo:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = parser.parse_args()
    bench(args.repeats, np.dtype(args.dtype).type)


if __name__ == "__main__":
    main()
