"""Small symmetric-matrix helpers used throughout the test statistics."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import NotPositiveDefinite

# Relative floor below which a symmetric matrix counts as non-PD.
PD_REL_TOL = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def chol_lower(a: np.ndarray, err: type[NotPositiveDefinite] = NotPositiveDefinite,
               what: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD matrix, raising `err` on failure.

    Failure is never papered over with regularization; callers are expected to
    treat a non-PD matrix as a reportable error.
    """
    a = symmetrize(np.asarray(a, dtype=float))
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise err(f"{what} is not positive definite") from None
    # Cholesky can succeed on matrices that are PD only up to roundoff; enforce
    # the documented relative floor so downstream inverses are trustworthy.
    d = np.diag(low) ** 2
    if d.min() < PD_REL_TOL * max(d.max(), np.abs(a).max(), 1e-300):
        raise err(f"{what} is positive definite only below tolerance")
    return low


def upper_chol(a: np.ndarray, err: type[NotPositiveDefinite] = NotPositiveDefinite,
               what: str = "matrix") -> np.ndarray:
    """Upper-triangular factor U with a = U'U (transpose of the lower factor)."""
    return chol_lower(a, err, what).T


def solve_pd(a: np.ndarray, b: np.ndarray,
             err: type[NotPositiveDefinite] = NotPositiveDefinite,
             what: str = "matrix") -> np.ndarray:
    """Solve a x = b for symmetric PD a via Cholesky."""
    low = chol_lower(a, err, what)
    y = sla.solve_triangular(low, b, lower=True)
    return sla.solve_triangular(low.T, y, lower=False)


def quad_form_inv(a: np.ndarray, v: np.ndarray,
                  err: type[NotPositiveDefinite] = NotPositiveDefinite,
                  what: str = "matrix") -> float:
    """v' a^{-1} v for symmetric PD a, computed as a squared triangular solve."""
    low = chol_lower(a, err, what)
    y = sla.solve_triangular(low, v, lower=True)
    return float(y @ y)


def eigvalsh_desc(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, descending."""
    return np.linalg.eigvalsh(symmetrize(a))[::-1]


def psd_sqrt(a: np.ndarray, clip_tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root of a PSD matrix, clamping small negative eigenvalues."""
    a = symmetrize(np.asarray(a, dtype=float))
    vals, vecs = np.linalg.eigh(a)
    floor = -clip_tol * max(vals[-1], 0.0) if vals.size else 0.0
    if vals.size and vals[0] < floor:
        raise NotPositiveDefinite("matrix has a significantly negative eigenvalue")
    vals = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * vals) @ vecs.T
