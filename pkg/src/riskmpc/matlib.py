"""Small dense symmetric-matrix utilities.

All functions take and return plain ``numpy`` arrays.  Symmetric inputs are
validated with :func:`sym_matrix`, which symmetrises matrices that are
symmetric up to round-off and rejects everything else.
"""
import numpy as np

from ._backend import jacobi_eigh
from .errors import InvalidMatrix, NotPositiveSemidefinite

SYM_RTOL = 1e-12
PSD_TOL = 1e-10


def sym_matrix(m):
    """Validate ``m`` as a symmetric matrix and return ``(m + m.T) / 2``."""
    a = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidMatrix(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidMatrix("matrix has non-finite entries")
    scale = 1.0 + np.max(np.abs(a))
    if np.max(np.abs(a - a.T)) > SYM_RTOL * scale:
        raise InvalidMatrix("matrix is not symmetric")
    return 0.5 * (a + a.T)


def sym_eig(m):
    """Eigenvalues (ascending) and orthonormal eigenvectors by cyclic Jacobi.

    Returns ``(w, V)`` with ``V @ diag(w) @ V.T == m``.
    """
    a = sym_matrix(m)
    return jacobi_eigh(a)


def psd_sqrt(m):
    """Symmetric PSD square root; eigenvalues down to ``-1e-10`` are clamped."""
    w, v = sym_eig(m)
    if w[0] < -PSD_TOL:
        raise NotPositiveSemidefinite(f"minimum eigenvalue {w[0]:.3e} < {-PSD_TOL}")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def min_eig(m):
    return sym_eig(m)[0][0]


def max_eig(m):
    return sym_eig(m)[0][-1]


def is_neg_def(m, margin=0.0):
    """True iff the largest eigenvalue of ``m`` is below ``-margin``."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return bool(max_eig(m) < -margin)


def is_pos_def(m, margin=0.0):
    if margin < 0:
        raise ValueError("margin must be non-negative")
    return bool(min_eig(m) > margin)


def cholesky(m):
    """Lower Cholesky factor of a positive definite matrix."""
    a = sym_matrix(m)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveSemidefinite("matrix is not positive definite") from exc


def spectral_norm(m):
    a = np.atleast_2d(np.asarray(m, dtype=np.float64))
    return float(np.linalg.norm(a, 2))


def frobenius_norm(m):
    return float(np.linalg.norm(np.asarray(m, dtype=np.float64)))
