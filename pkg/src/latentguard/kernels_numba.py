"""Numba-jitted implementations of the hot kernels.

Signatures and conventions mirror kernels_numpy exactly. Convolution uses an
explicit patch-gather followed by a BLAS gemm (np.dot inside nopython mode);
pooling and bilinear resampling are direct loops. All kernels are sequential
and therefore bit-deterministic for a fixed input.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _gather_patches(x, h, w):
    n, ci = x.shape[0], x.shape[1]
    patches = np.zeros((n * h * w, ci * 9), x.dtype)
    for im in range(n):
        for y in range(h):
            for xx in range(w):
                row = (im * h + y) * w + xx
                k = 0
                for c in range(ci):
                    for ky in range(3):
                        sy = y + ky - 1
                        if sy < 0 or sy >= h:
                            k += 3
                            continue
                        for kx in range(3):
                            sx = xx + kx - 1
                            if 0 <= sx < w:
                                patches[row, k] = x[im, c, sy, sx]
                            k += 1
    return patches


@njit(cache=True)
def conv3x3_forward(x, w, b):
    n, ci, h, wd = x.shape
    co = w.shape[0]
    patches = _gather_patches(x, h, wd)
    w2 = np.ascontiguousarray(w.reshape(co, ci * 9).T)
    out2 = np.dot(patches, w2)
    out = np.empty((n, co, h, wd), x.dtype)
    for im in range(n):
        for c in range(co):
            for y in range(h):
                for xx in range(wd):
                    out[im, c, y, xx] = out2[(im * h + y) * wd + xx, c] + b[c]
    return out


@njit(cache=True)
def conv3x3_input_grad(dy, w):
    co, ci = w.shape[0], w.shape[1]
    w_flip = np.empty((ci, co, 3, 3), w.dtype)
    for a in range(co):
        for b_ in range(ci):
            for ky in range(3):
                for kx in range(3):
                    w_flip[b_, a, ky, kx] = w[a, b_, 2 - ky, 2 - kx]
    zero_bias = np.zeros(ci, dy.dtype)
    return conv3x3_forward(dy, w_flip, zero_bias)


@njit(cache=True)
def conv3x3_param_grad(dy, x):
    n, ci, h, wd = x.shape
    co = dy.shape[1]
    patches = _gather_patches(x, h, wd)
    dy_mat = np.empty((n * h * wd, co), dy.dtype)
    db = np.zeros(co, dy.dtype)
    for im in range(n):
        for c in range(co):
            for y in range(h):
                for xx in range(wd):
                    g = dy[im, c, y, xx]
                    dy_mat[(im * h + y) * wd + xx, c] = g
                    db[c] += g
    dw2 = np.dot(np.ascontiguousarray(dy_mat.T), patches)
    return dw2.reshape(co, ci, 3, 3), db


@njit(cache=True)
def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    y = np.empty((n, c, h2, w2), x.dtype)
    idx = np.empty((n, c, h2, w2), np.uint8)
    for im in range(n):
        for ch in range(c):
            for py in range(h2):
                for px in range(w2):
                    best = x[im, ch, 2 * py, 2 * px]
                    best_k = 0
                    for ky in range(2):
                        for kx in range(2):
                            v = x[im, ch, 2 * py + ky, 2 * px + kx]
                            if v > best:
                                best = v
                                best_k = ky * 2 + kx
                    y[im, ch, py, px] = best
                    idx[im, ch, py, px] = best_k
    return y, idx


@njit(cache=True)
def maxpool2x2_backward(dy, idx):
    n, c, h2, w2 = dy.shape
    dx = np.zeros((n, c, h2 * 2, w2 * 2), dy.dtype)
    for im in range(n):
        for ch in range(c):
            for py in range(h2):
                for px in range(w2):
                    k = idx[im, ch, py, px]
                    dx[im, ch, 2 * py + k // 2, 2 * px + k % 2] = dy[im, ch, py, px]
    return dx


@njit(cache=True)
def _up2_taps(out_size, in_size):
    i0 = np.empty(out_size, np.int64)
    i1 = np.empty(out_size, np.int64)
    frac = np.empty(out_size, np.float64)
    for i in range(out_size):
        src = (i + 0.5) / 2.0 - 0.5
        lo = int(np.floor(src))
        f = src - lo
        a = min(max(lo, 0), in_size - 1)
        b = min(max(lo + 1, 0), in_size - 1)
        i0[i] = a
        i1[i] = b
        frac[i] = f
    return i0, i1, frac


@njit(cache=True)
def bilinear_up2_forward(x):
    n, c, h, w = x.shape
    h2, w2 = 2 * h, 2 * w
    y0, y1, fy = _up2_taps(h2, h)
    x0, x1, fx = _up2_taps(w2, w)
    out = np.empty((n, c, h2, w2), x.dtype)
    for im in range(n):
        for ch in range(c):
            for oy in range(h2):
                for ox in range(w2):
                    top = x[im, ch, y0[oy], x0[ox]] * (1.0 - fx[ox]) + x[im, ch, y0[oy], x1[ox]] * fx[ox]
                    bot = x[im, ch, y1[oy], x0[ox]] * (1.0 - fx[ox]) + x[im, ch, y1[oy], x1[ox]] * fx[ox]
                    out[im, ch, oy, ox] = top * (1.0 - fy[oy]) + bot * fy[oy]
    return out


@njit(cache=True)
def bilinear_up2_backward(dy):
    n, c, h2, w2 = dy.shape
    h, w = h2 // 2, w2 // 2
    y0, y1, fy = _up2_taps(h2, h)
    x0, x1, fx = _up2_taps(w2, w)
    dx = np.zeros((n, c, h, w), dy.dtype)
    for im in range(n):
        for ch in range(c):
            for oy in range(h2):
                for ox in range(w2):
                    g = dy[im, ch, oy, ox]
                    wy0 = 1.0 - fy[oy]
                    wx0 = 1.0 - fx[ox]
                    dx[im, ch, y0[oy], x0[ox]] += g * wy0 * wx0
                    dx[im, ch, y0[oy], x1[ox]] += g * wy0 * fx[ox]
                    dx[im, ch, y1[oy], x0[ox]] += g * fy[oy] * wx0
                    dx[im, ch, y1[oy], x1[ox]] += g * fy[oy] * fx[ox]
    return dx
