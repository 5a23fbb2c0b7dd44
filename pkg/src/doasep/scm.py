"""Spatial covariance tensors and the small Hermitian helpers built on them.

Array conventions (leading axes are always frequency-like):

* observed/predicted SCM tensors: ``(F, T, M, M)`` complex,
* DoA kernel sets: ``(F, O, M, M)`` complex, Hermitian PSD, unit trace,
* spatial weights: ``(S, O)`` nonnegative,
* mixing filters: ``(F, S, M, M)`` complex, Hermitian PSD.

All helpers broadcast over the leading axes, so they work equally on a
single matrix or a full tensor.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, NumericError
from .signal import ComplexSpectrogram

__all__ = [
    "compute_scm",
    "regularized_inverse",
    "trace_product",
    "compose_mixing_filter",
    "hermitize",
]


def compute_scm(spec: ComplexSpectrogram) -> np.ndarray:
    """Instantaneous rank-1 spatial covariance ``x x^H`` per (f, t).

    Returns a ``(F, T, M, M)`` complex tensor.  Each slice is Hermitian
    positive semidefinite by construction.
    """
    x = spec.bins  # (M, F, T)
    if not np.all(np.isfinite(x)):
        raise NumericError("spectrogram contains non-finite bins")
    return np.einsum("mft,nft->ftmn", x, x.conj())


def hermitize(mat: np.ndarray) -> np.ndarray:
    """Average a stack of square matrices with their conjugate transposes."""
    return 0.5 * (mat + np.swapaxes(mat, -1, -2).conj())


def ridge_delta(mat: np.ndarray, ridge_rel: float) -> np.ndarray:
    """Per-matrix ridge ``ridge_rel * trace / M`` with a floor for zero trace."""
    m = mat.shape[-1]
    tr = np.einsum("...ii->...", mat).real / m
    return np.where(tr > 0.0, ridge_rel * tr, ridge_rel)


def regularized_inverse(mat: np.ndarray, ridge_rel: float = 1e-7,
                        delta: np.ndarray | None = None) -> np.ndarray:
    """Inverse of ``mat + delta * I`` for a stack of Hermitian matrices.

    ``delta`` defaults to ``ridge_rel * trace / M`` per matrix (``ridge_rel``
    itself when the trace is zero), which keeps rank-deficient SCMs
    invertible without visibly moving well-conditioned ones.  Pass an
    explicit ``delta`` to share one ridge across several calls.  The output
    is re-Hermitized to scrub rounding asymmetry.
    """
    mat = np.asarray(mat)
    if mat.shape[-1] != mat.shape[-2]:
        raise DataError(f"expected square matrices, got shape {mat.shape}")
    if delta is None:
        delta = ridge_delta(mat, ridge_rel)
    eye = np.eye(mat.shape[-1], dtype=mat.dtype)
    shifted = mat + np.asarray(delta)[..., None, None] * eye
    return hermitize(np.linalg.inv(shifted))


def trace_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``trace(a @ b)`` over the trailing matrix axes, without forming ``a @ b``."""
    return np.einsum("...ij,...ji->...", a, b)


def compose_mixing_filter(kernels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Mixing filter ``H_fs = sum_o W_fo z_so``.

    Parameters
    ----------
    kernels : np.ndarray
        ``(F, O, M, M)`` DoA kernels.
    weights : np.ndarray
        ``(S, O)`` nonnegative spatial weights.

    Returns
    -------
    np.ndarray
        ``(F, S, M, M)`` mixing filter, Hermitian PSD when the inputs are.
    """
    if np.any(weights < 0):
        raise DataError("spatial weights must be nonnegative")
    return np.einsum("foij,so->fsij", kernels, weights)
