"""Latent-subspace purifier: a cascade of channel-wise and spatial PCA.

The purifier replaces each latent vector (one per spatial position) by its
projection onto a single learned principal direction of the channel space,
then projects the resulting single-channel spatial map onto a small learned
spatial subspace, and maps everything back. Both stages are affine with
constant, pre-trained components, so the whole transform is linear-affine in
the latent and exactly differentiable; adversarial energy outside the learned
subspaces is annihilated.

Shapes, for batch size b, s spatial positions per item and v channels:

    latent rows   (b*s, v)  -- item-major, then row-major spatial
    channel stage (b*s, 1)  -- coefficients on the channel direction
    folded map    (s, b)    -- column j is item j's spatial map
    spatial stage (b, k_s)  -- coefficients on the spatial subspace

During training the components are refit on every batch and blended into the
running components by exponential moving average; new basis columns are
sign-aligned to the old ones before averaging and the blend is
re-orthonormalized by QR, so the orthonormality invariants survive the
averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tape, Tensor
from .exceptions import ContractError, ShapeError
from .linalg import fix_eigvec_signs
from .pca import PcaComponents, fit_pca

UNIT_TOL = 1e-6


@dataclass
class PurifierConfig:
    """Hyperparameters of the purifier stage."""

    k_s: int = 8          # retained spatial components
    eta_v: float = 0.1    # EMA rate, channel stage
    eta_s: float = 0.001  # EMA rate, spatial stage
    mode: str = "train"   # train | infer

    def validate(self) -> None:
        if self.k_s < 1:
            raise ContractError(f"k_s must be positive, got {self.k_s}")
        for name, eta in (("eta_v", self.eta_v), ("eta_s", self.eta_s)):
            if not (0.0 <= eta <= 1.0):
                raise ContractError(f"{name}={eta} outside [0, 1]")
        if self.mode not in ("train", "infer"):
            raise ContractError(f"mode must be 'train' or 'infer', got {self.mode!r}")


@dataclass
class LatentComponents:
    """Learned quantities of the two PCA stages."""

    mu_v: np.ndarray  # (v,)
    u_v: np.ndarray   # (v, 1), unit column
    mu_s: np.ndarray  # (s,)
    u_s: np.ndarray   # (s, k_s), orthonormal columns

    @property
    def v(self) -> int:
        return self.u_v.shape[0]

    @property
    def s(self) -> int:
        return self.u_s.shape[0]

    @property
    def k_s(self) -> int:
        return self.u_s.shape[1]

    def validate(self, tol: float = UNIT_TOL) -> None:
        PcaComponents(self.mu_v, self.u_v).validate(tol)
        PcaComponents(self.mu_s, self.u_s).validate(tol)

    def copy(self) -> "LatentComponents":
        return LatentComponents(self.mu_v.copy(), self.u_v.copy(),
                                self.mu_s.copy(), self.u_s.copy())

    def astuple(self):
        return self.mu_v, self.u_v, self.mu_s, self.u_s


def fold_batch(z_v: np.ndarray, b: int) -> np.ndarray:
    """(b*s, 1) channel coefficients -> (s, b) map with one column per item."""
    z_v = np.asarray(z_v)
    rows = z_v.shape[0]
    if rows % b:
        raise ContractError(f"row count {rows} not divisible by batch size {b}")
    return np.ascontiguousarray(z_v.reshape(b, rows // b).T)


def unfold_batch(folded: np.ndarray) -> np.ndarray:
    """Inverse of fold_batch: (s, b) -> (b*s, 1)."""
    folded = np.asarray(folded)
    s, b = folded.shape
    return np.ascontiguousarray(folded.T.reshape(b * s, 1))


def _check_latent(z_shape: tuple, comp: LatentComponents, b: int) -> int:
    if len(z_shape) != 2 or z_shape[1] != comp.v:
        raise ShapeError(f"latent rows {z_shape} incompatible with v={comp.v}")
    if z_shape[0] % b:
        raise ContractError(f"row count {z_shape[0]} not divisible by batch size {b}")
    s = z_shape[0] // b
    if s != comp.s:
        raise ShapeError(f"{s} spatial positions per item, components expect {comp.s}")
    return s


def apply_purifier(tape: Tape, z: Tensor, comp: LatentComponents, b: int) -> Tensor:
    """Run the full cascade on latent rows, recording every stage on the tape."""
    _check_latent(z.data.shape, comp, b)
    z_v = ops.pca_project(tape, z, comp.mu_v, comp.u_v)          # (b*s, 1)
    folded = ops.reshape(tape, z_v, (b, comp.s))                 # rows = items
    z_s = ops.pca_project(tape, folded, comp.mu_s, comp.u_s)     # (b, k_s)
    restored = ops.pca_reconstruct(tape, z_s, comp.mu_s, comp.u_s)
    z_v_hat = ops.reshape(tape, restored, (b * comp.s, 1))
    return ops.pca_reconstruct(tape, z_v_hat, comp.mu_v, comp.u_v)


def apply_purifier_array(z: np.ndarray, comp: LatentComponents, b: int) -> np.ndarray:
    """Tape-free variant of apply_purifier for pure evaluation paths."""
    tape = Tape()
    return apply_purifier(tape, Tensor(np.asarray(z)), comp, b).data


def batch_statistics(z: np.ndarray, z_v: np.ndarray, b: int, k_s: int
                     ) -> tuple[PcaComponents, PcaComponents]:
    """Fit this batch's channel and spatial components.

    The channel stage fits on the (b*s, v) latent rows; the spatial stage fits
    on the transposed folded map (b rows of dimension s), so both stages see b
    times more samples per training step than a single item would provide.
    """
    s = z.shape[0] // b
    if k_s > s:
        raise ContractError(f"k_s={k_s} exceeds spatial dimensionality s={s}")
    chan = fit_pca(z, 1)
    spat = fit_pca(np.ascontiguousarray(fold_batch(z_v, b).T), k_s)
    return chan, spat


def _ema_blend(old: PcaComponents, new: PcaComponents, eta: float) -> PcaComponents:
    """(1-eta)*old + eta*new with sign alignment and QR re-orthonormalization."""
    if eta == 0.0:
        return old.copy()
    if eta == 1.0:
        return new.copy()
    aligned = new.basis.copy()
    dots = (old.basis * aligned).sum(axis=0)
    aligned[:, dots < 0] *= -1.0
    mean = (1.0 - eta) * old.mean + eta * new.mean
    blended = (1.0 - eta) * old.basis + eta * aligned
    q, _ = np.linalg.qr(blended.astype(np.float64))
    return PcaComponents(mean, fix_eigvec_signs(q).astype(old.basis.dtype))


def ema_update(comp: LatentComponents | None, z: np.ndarray, z_v: np.ndarray | None,
               cfg: PurifierConfig, b: int) -> LatentComponents:
    """One incremental-training step of the components.

    ``z`` is the batch's latent rows and ``z_v`` its channel-stage
    coefficients as recorded by the forward pass (computed with the
    pre-update components). With ``comp is None`` (the first training step)
    the batch statistics are adopted directly, i.e. the EMA rates are treated
    as 1, and ``z_v`` is derived from the freshly fitted channel stage.
    """
    cfg.validate()
    if comp is None:
        s = z.shape[0] // b
        if cfg.k_s > s:
            raise ContractError(f"k_s={cfg.k_s} exceeds spatial dimensionality s={s}")
        chan = fit_pca(z, 1)
        z_v0 = (z - chan.mean) @ chan.basis
        spat = fit_pca(np.ascontiguousarray(fold_batch(z_v0, b).T), cfg.k_s)
        out = LatentComponents(chan.mean, chan.basis, spat.mean, spat.basis)
    else:
        if z_v is None:
            raise ContractError("z_v from the forward pass is required after the first step")
        chan, spat = batch_statistics(z, z_v, b, cfg.k_s)
        new_chan = _ema_blend(PcaComponents(comp.mu_v, comp.u_v), chan, cfg.eta_v)
        new_spat = _ema_blend(PcaComponents(comp.mu_s, comp.u_s), spat, cfg.eta_s)
        out = LatentComponents(new_chan.mean, new_chan.basis,
                               new_spat.mean, new_spat.basis)
    out.validate()
    return out
