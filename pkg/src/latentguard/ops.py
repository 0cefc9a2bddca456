"""Differentiable primitive operations recorded on a Tape.

Each function computes its forward result eagerly, wraps it in a Tensor and
records a backward closure (adjoint propagation) plus a replay closure
(forward re-execution from saved inputs). PCA projections treat their mean
and basis as constants: adjoints flow through the data argument only, which
is how purifier components stay fixed under weight backpropagation.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor
from .exceptions import ShapeError


def _as_scalar(value, dtype):
    return np.asarray(value, dtype=dtype)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape} differ")
    ad, bd = a.data, b.data
    out = Tensor(ad + bd)
    tape.record(out, (a, b), lambda g: (g, g), replay_fn=lambda: ad + bd, label="add")
    return out


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: shapes {a.data.shape} and {b.data.shape} differ")
    ad, bd = a.data, b.data
    out = Tensor(ad - bd)
    tape.record(out, (a, b), lambda g: (g, -g), replay_fn=lambda: ad - bd, label="sub")
    return out


def scale(tape: Tape, a: Tensor, factor: float) -> Tensor:
    ad = a.data
    f = ad.dtype.type(factor)
    out = Tensor(ad * f)
    tape.record(out, (a,), lambda g: (g * f,), replay_fn=lambda: ad * f, label="scale")
    return out


def relu(tape: Tape, x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor(np.maximum(xd, 0))
    mask = xd > 0
    tape.record(out, (x,), lambda g: (g * mask,), replay_fn=lambda: np.maximum(xd, 0), label="relu")
    return out


def sigmoid(tape: Tape, x: Tensor) -> Tensor:
    xd = x.data
    s = 1.0 / (1.0 + np.exp(-xd))
    out = Tensor(s)
    tape.record(
        out, (x,), lambda g: (g * s * (1.0 - s),),
        replay_fn=lambda: 1.0 / (1.0 + np.exp(-xd)), label="sigmoid",
    )
    return out


def linear_affine(tape: Tape, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(
            f"linear: input {x.data.shape} incompatible with weight {w.data.shape}"
        )
    xd, wd, bd = x.data, w.data, b.data
    out = Tensor(xd @ wd + bd)

    def bwd(g):
        return g @ wd.T, xd.T @ g, g.sum(axis=0)

    tape.record(out, (x, w, b), bwd, replay_fn=lambda: xd @ wd + bd, label="linear")
    return out


def pca_project(tape: Tape, x: Tensor, mean: np.ndarray, basis: np.ndarray) -> Tensor:
    """(x - mean) @ basis with mean/basis held constant."""
    if x.data.ndim != 2 or x.data.shape[1] != basis.shape[0]:
        raise ShapeError(
            f"pca_project: input {x.data.shape} incompatible with basis {basis.shape}"
        )
    xd = x.data
    out = Tensor((xd - mean) @ basis)
    tape.record(
        out, (x,), lambda g: (g @ basis.T,),
        replay_fn=lambda: (xd - mean) @ basis, label="pca_project",
    )
    return out


def pca_reconstruct(tape: Tape, y: Tensor, mean: np.ndarray, basis: np.ndarray) -> Tensor:
    """y @ basis.T + mean with mean/basis held constant."""
    if y.data.ndim != 2 or y.data.shape[1] != basis.shape[1]:
        raise ShapeError(
            f"pca_reconstruct: input {y.data.shape} incompatible with basis {basis.shape}"
        )
    yd = y.data
    out = Tensor(yd @ basis.T + mean)
    tape.record(
        out, (y,), lambda g: (g @ basis,),
        replay_fn=lambda: yd @ basis.T + mean, label="pca_reconstruct",
    )
    return out


def transpose2d(tape: Tape, x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor(np.ascontiguousarray(xd.T))
    tape.record(
        out, (x,), lambda g: (np.ascontiguousarray(g.T),),
        replay_fn=lambda: np.ascontiguousarray(xd.T), label="transpose",
    )
    return out


def reshape(tape: Tape, x: Tensor, shape: tuple) -> Tensor:
    xd = x.data
    orig = xd.shape
    out = Tensor(xd.reshape(shape))
    tape.record(
        out, (x,), lambda g: (g.reshape(orig),),
        replay_fn=lambda: xd.reshape(shape), label="reshape",
    )
    return out


def nchw_to_rows(tape: Tape, x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n*h*w, c); rows ordered item-major, then row-major spatial."""
    n, c, h, w = x.data.shape
    xd = x.data

    def fwd():
        return np.ascontiguousarray(xd.transpose(0, 2, 3, 1).reshape(n * h * w, c))

    out = Tensor(fwd())
    tape.record(
        out, (x,),
        lambda g: (np.ascontiguousarray(g.reshape(n, h, w, c).transpose(0, 3, 1, 2)),),
        replay_fn=fwd, label="nchw_to_rows",
    )
    return out


def rows_to_nchw(tape: Tape, z: Tensor, n: int, c: int, h: int, w: int) -> Tensor:
    if z.data.shape != (n * h * w, c):
        raise ShapeError(f"rows_to_nchw: got {z.data.shape}, expected {(n * h * w, c)}")
    zd = z.data

    def fwd():
        return np.ascontiguousarray(zd.reshape(n, h, w, c).transpose(0, 3, 1, 2))

    out = Tensor(fwd())
    tape.record(
        out, (z,),
        lambda g: (np.ascontiguousarray(g.transpose(0, 2, 3, 1).reshape(n * h * w, c)),),
        replay_fn=fwd, label="rows_to_nchw",
    )
    return out


def per_item_l2(tape: Tape, x: Tensor) -> Tensor:
    """Euclidean norm over all axes except the first; zero norm gets zero adjoint."""
    xd = x.data
    n = xd.shape[0]
    flat = xd.reshape(n, -1)
    norms = np.sqrt((flat * flat).sum(axis=1))
    out = Tensor(norms)

    def bwd(g):
        safe = np.where(norms > 0, norms, 1.0)
        gx = flat * (g / safe)[:, None]
        gx[norms == 0] = 0
        return (gx.reshape(xd.shape),)

    tape.record(
        out, (x,), bwd,
        replay_fn=lambda: np.sqrt((xd.reshape(n, -1) ** 2).sum(axis=1)), label="per_item_l2",
    )
    return out


def weighted_sum(tape: Tape, v: Tensor, weights: np.ndarray) -> Tensor:
    if v.data.shape != weights.shape:
        raise ShapeError(f"weighted_sum: value {v.data.shape} vs weights {weights.shape}")
    vd = v.data
    w = weights.astype(vd.dtype, copy=False)
    out = Tensor(_as_scalar((vd * w).sum(), vd.dtype))
    tape.record(
        out, (v,), lambda g: (g * w,),
        replay_fn=lambda: _as_scalar((vd * w).sum(), vd.dtype), label="weighted_sum",
    )
    return out


def mse(tape: Tape, pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    if pred.data.shape != target.shape:
        raise ShapeError(f"mse: prediction {pred.data.shape} vs target {target.shape}")
    pd = pred.data
    diff = pd - target
    n = diff.size
    out = Tensor(_as_scalar((diff * diff).sum() / n, pd.dtype))
    tape.record(
        out, (pred,), lambda g: (g * (2.0 / n) * diff,),
        replay_fn=lambda: _as_scalar(((pd - target) ** 2).sum() / n, pd.dtype), label="mse",
    )
    return out


def combine_scalars(tape: Tape, a: Tensor, b: Tensor, ca: float, cb: float) -> Tensor:
    ad, bd = a.data, b.data
    fa = ad.dtype.type(ca)
    fb = ad.dtype.type(cb)
    out = Tensor(_as_scalar(fa * ad + fb * bd, ad.dtype))
    tape.record(
        out, (a, b), lambda g: (g * fa, g * fb),
        replay_fn=lambda: _as_scalar(fa * ad + fb * bd, ad.dtype), label="combine_scalars",
    )
    return out


def gauss_reparam(tape: Tape, mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    """mu + exp(logvar / 2) * eps with eps a fixed noise draw."""
    md, ld = mu.data, logvar.data
    std = np.exp(0.5 * ld)
    out = Tensor(md + std * eps)
    tape.record(
        out, (mu, logvar), lambda g: (g, g * eps * 0.5 * std),
        replay_fn=lambda: md + np.exp(0.5 * ld) * eps, label="gauss_reparam",
    )
    return out


def kl_standard_normal(tape: Tape, mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over all coordinates."""
    md, ld = mu.data, logvar.data
    ev = np.exp(ld)
    out = Tensor(_as_scalar(-0.5 * (1.0 + ld - md * md - ev).sum(), md.dtype))
    tape.record(
        out, (mu, logvar), lambda g: (g * md, g * (-0.5) * (1.0 - ev)),
        replay_fn=lambda: _as_scalar(-0.5 * (1.0 + ld - md * md - np.exp(ld)).sum(), md.dtype),
        label="kl_standard_normal",
    )
    return out
