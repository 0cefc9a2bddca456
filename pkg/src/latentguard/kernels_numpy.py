"""Pure-numpy reference implementations of the hot kernels.

All arrays are NCHW, float32 or float64. Convolutions are 3x3 with zero
padding 1 (spatial extent preserved); pooling is 2x2 stride 2; upsampling is
bilinear x2 with the align-corners=false convention (sample positions at
pixel centers, edge-clamped).
"""

from __future__ import annotations

import numpy as np

# Cache of (in_size, dtype) -> x2 interpolation matrix of shape (2*in, in).
_INTERP_CACHE: dict = {}


def _im2col(x_pad, h, w):
    # (n, c, h+2, w+2) -> (n*h*w, c*9) patch matrix, row-major over (n, y, x)
    n, c = x_pad.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(x_pad, (3, 3), axis=(2, 3))
    # win: (n, c, h, w, 3, 3) -> (n, h, w, c, 3, 3)
    patches = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
    return np.ascontiguousarray(patches)


def conv3x3_forward(x, w, b):
    n, ci, h, wd = x.shape
    co = w.shape[0]
    x_pad = np.zeros((n, ci, h + 2, wd + 2), dtype=x.dtype)
    x_pad[:, :, 1:-1, 1:-1] = x
    patches = _im2col(x_pad, h, wd)
    out = patches @ w.reshape(co, ci * 9).T + b
    return out.reshape(n, h, wd, co).transpose(0, 3, 1, 2).copy()


def conv3x3_input_grad(dy, w):
    # Correlation of dy with the spatially flipped kernel, channels swapped.
    w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    zero_bias = np.zeros(w_flip.shape[0], dtype=dy.dtype)
    return conv3x3_forward(dy, w_flip, zero_bias)


def conv3x3_param_grad(dy, x):
    n, ci, h, wd = x.shape
    co = dy.shape[1]
    x_pad = np.zeros((n, ci, h + 2, wd + 2), dtype=x.dtype)
    x_pad[:, :, 1:-1, 1:-1] = x
    patches = _im2col(x_pad, h, wd)
    dy_mat = dy.transpose(0, 2, 3, 1).reshape(n * h * wd, co)
    dw = (dy_mat.T @ patches).reshape(co, ci, 3, 3)
    db = dy.sum(axis=(0, 2, 3))
    return dw, db


def maxpool2x2_forward(x):
    n, c, h, w = x.shape
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(win, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2x2_backward(dy, idx):
    n, c, h2, w2 = dy.shape
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.int64), dy[..., None], axis=-1)
    dx = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(n, c, h2 * 2, w2 * 2))


def _up2_matrix(in_size, dtype):
    key = (in_size, np.dtype(dtype).str)
    mat = _INTERP_CACHE.get(key)
    if mat is None:
        out_size = 2 * in_size
        mat = np.zeros((out_size, in_size), dtype=dtype)
        for i in range(out_size):
            src = (i + 0.5) / 2.0 - 0.5
            lo = int(np.floor(src))
            frac = src - lo
            i0 = min(max(lo, 0), in_size - 1)
            i1 = min(max(lo + 1, 0), in_size - 1)
            mat[i, i0] += 1.0 - frac
            mat[i, i1] += frac
        _INTERP_CACHE[key] = mat
    return mat


def bilinear_up2_forward(x):
    h, w = x.shape[2], x.shape[3]
    ah = _up2_matrix(h, x.dtype)
    aw = _up2_matrix(w, x.dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(ah, x), aw.T))


def bilinear_up2_backward(dy):
    h2, w2 = dy.shape[2], dy.shape[3]
    ah = _up2_matrix(h2 // 2, dy.dtype)
    aw = _up2_matrix(w2 // 2, dy.dtype)
    return np.ascontiguousarray(np.matmul(np.matmul(ah.T, dy), aw))
