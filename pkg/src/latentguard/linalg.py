"""Symmetric eigendecomposition with the contracts PCA fitting relies on.

Backed by LAPACK via numpy.linalg.eigh. The wrapper enforces symmetry and
positive-semidefiniteness preconditions, returns eigenvalues in descending
order, and fixes each eigenvector's sign so its largest-magnitude entry is
non-negative (eigenvectors are otherwise sign-ambiguous, and the EMA
averaging downstream needs a stable convention).
"""

from __future__ import annotations

import numpy as np

from .exceptions import ContractError, NumericError, ShapeError

SYMMETRY_TOL = 1e-8
PSD_SLACK = -1e-8


def fix_eigvec_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so each largest-|entry| is non-negative."""
    out = vectors.copy()
    lead = np.abs(out).argmax(axis=0)
    signs = np.sign(out[lead, np.arange(out.shape[1])])
    signs[signs == 0] = 1.0
    out *= signs
    return out


def eigh_psd(c: np.ndarray, symmetry_tol: float = SYMMETRY_TOL,
             psd_slack: float = PSD_SLACK) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecompose a symmetric PSD matrix.

    Returns (eigenvalues descending, eigenvectors as columns, orthonormal,
    sign-normalized). Raises ShapeError for non-square input, ContractError
    for asymmetry or eigenvalues below the PSD slack, NumericError when the
    underlying solver fails to converge.
    """
    c = np.asarray(c)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ShapeError(f"eigh_psd expects a square matrix, got {c.shape}")
    if not np.isfinite(c).all():
        raise NumericError("eigh_psd input contains non-finite values")
    scale = max(1.0, float(np.abs(c).max()))
    if np.abs(c - c.T).max() > symmetry_tol * scale:
        raise ContractError(
            f"matrix is not symmetric within tolerance {symmetry_tol} (relative)"
        )
    sym = (c + c.T) / 2.0
    try:
        evals, evecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed to converge: {exc}") from exc
    if evals[0] < psd_slack * scale:
        raise ContractError(
            f"matrix is not positive semidefinite: min eigenvalue {evals[0]:.3e}"
        )
    order = np.argsort(evals)[::-1]
    evals = np.ascontiguousarray(evals[order])
    evecs = np.ascontiguousarray(evecs[:, order])
    return evals, fix_eigvec_signs(evecs)
