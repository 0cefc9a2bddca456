"""Principal component fitting and the forward/inverse transform pair.

The covariance is the unnormalized scatter (X - mu)^T (X - mu); eigenvectors
are invariant to the missing 1/(n-1) factor. Directions with eigenvalue below
ZERO_VARIANCE_EPS are replaced by canonical basis vectors orthogonalized
against the columns already selected, so a degenerate batch still yields a
full-rank orthonormal basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, ShapeError
from .linalg import eigh_psd, fix_eigvec_signs

ZERO_VARIANCE_EPS = 1e-12
ORTHONORMALITY_TOL = 1e-6


@dataclass
class PcaComponents:
    """Mean vector and orthonormal basis produced by fit_pca."""

    mean: np.ndarray   # (d,)
    basis: np.ndarray  # (d, k), orthonormal columns

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def validate(self, tol: float = ORTHONORMALITY_TOL) -> None:
        if self.mean.shape != (self.dim,):
            raise ShapeError(f"mean shape {self.mean.shape} vs basis {self.basis.shape}")
        if not (1 <= self.k <= self.dim):
            raise ContractError(f"k={self.k} outside [1, {self.dim}]")
        gram = self.basis.T @ self.basis
        err = np.abs(gram - np.eye(self.k, dtype=gram.dtype)).max()
        if err >= tol:
            raise ContractError(f"basis columns not orthonormal: max deviation {err:.3e}")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.basis).all()):
            raise ContractError("components contain non-finite values")

    def copy(self) -> "PcaComponents":
        return PcaComponents(self.mean.copy(), self.basis.copy())


def _complete_with_canonical(columns: list[np.ndarray], d: int, dtype) -> np.ndarray:
    """Return the first canonical vector orthogonalized against ``columns``."""
    for i in range(d):
        e = np.zeros(d, dtype=dtype)
        e[i] = 1.0
        for col in columns:
            e -= (e @ col) * col
        norm = np.linalg.norm(e)
        if norm > 0.5:
            return e / norm
    raise ContractError("cannot complete basis: selected columns already span the space")


def fit_pca(x: np.ndarray, k: int) -> PcaComponents:
    """Fit the mean and the first k principal directions of an n-by-d matrix."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"fit_pca expects a 2-d data matrix, got shape {x.shape}")
    n, d = x.shape
    if n == 0:
        raise ContractError("fit_pca requires at least one row")
    if not (1 <= k <= d):
        raise ContractError(f"k={k} outside [1, {d}]")

    x64 = x.astype(np.float64, copy=False)
    mean = x64.mean(axis=0)
    centered = x64 - mean
    cov = centered.T @ centered
    evals, evecs = eigh_psd(cov)

    columns: list[np.ndarray] = []
    for j in range(k):
        if evals[j] >= ZERO_VARIANCE_EPS:
            columns.append(evecs[:, j].copy())
        else:
            columns.append(_complete_with_canonical(columns, d, np.float64))
    basis = fix_eigvec_signs(np.stack(columns, axis=1))
    return PcaComponents(mean.astype(x.dtype), basis.astype(x.dtype))


def forward_pca(x: np.ndarray, components: PcaComponents) -> np.ndarray:
    """Project rows of x onto the component basis: (x - mean) @ basis."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != components.dim:
        raise ShapeError(
            f"forward_pca: input {x.shape} incompatible with dimension {components.dim}"
        )
    return (x - components.mean) @ components.basis


def inverse_pca(coeffs: np.ndarray, components: PcaComponents) -> np.ndarray:
    """Reconstruct rows from coefficients: coeffs @ basis.T + mean."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim != 2 or coeffs.shape[1] != components.k:
        raise ShapeError(
            f"inverse_pca: coefficients {coeffs.shape} incompatible with k={components.k}"
        )
    return coeffs @ components.basis.T + components.mean
