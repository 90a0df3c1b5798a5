"""Sample second moments, SDF pricing errors, and the pricing-error covariance.

Every specification test in the library is built from the same three moment
matrices (uncentered second moments, not covariances) and from pricing errors
of the linear SDF m_t = G_t' theta with G_t = (1, demeaned factors at t)'.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .panels import AugmentedFactors, ReturnPanel


@dataclass(frozen=True)
class MomentSet:
    """Sample cross moments of returns and augmented factors.

    q_gt : N x (K+1), (1/T) sum_t r_t G_t'
    q_r  : N x N,     (1/T) sum_t r_t r_t'
    q_g  : (K+1) x (K+1), (1/T) sum_t G_t G_t'
    """

    q_gt: np.ndarray
    q_r: np.ndarray
    q_g: np.ndarray
    t_len: int
    n_assets: int
    k_factors: int


@dataclass(frozen=True)
class PricingErrors:
    """Mean pricing error iota - q_gt theta and its per-period rows."""

    mean_error: np.ndarray  # (N,)
    per_period: np.ndarray  # (T, N), row t = iota - r_t * (G_t' theta)


def compute_moments(r: ReturnPanel, G: AugmentedFactors) -> MomentSet:
    """Exact sample averages of r G', r r' and G G'."""
    if r.t_len != G.t_len:
        raise DimensionMismatch(
            f"returns have T={r.t_len} but factors have T={G.t_len}; align first")
    k = G.k_factors
    if r.t_len < k + 1:
        raise DimensionMismatch(f"need T >= K+1 ({k + 1}), got T={r.t_len}")
    rv, gv = r.values, G.values
    t = r.t_len
    return MomentSet(
        q_gt=rv.T @ gv / t,
        q_r=rv.T @ rv / t,
        q_g=gv.T @ gv / t,
        t_len=t,
        n_assets=r.n_assets,
        k_factors=k,
    )


def as_theta(theta, k_plus_1: int) -> np.ndarray:
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).reshape(-1)
    if theta.shape[0] != k_plus_1:
        raise DimensionMismatch(f"theta has length {theta.shape[0]}, expected {k_plus_1}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta has non-finite entries")
    return theta


def mean_pricing_error(m: MomentSet, theta) -> np.ndarray:
    """iota_N - q_gt theta."""
    theta = as_theta(theta, m.k_factors + 1)
    return 1.0 - m.q_gt @ theta


def pricing_errors(r: ReturnPanel, G: AugmentedFactors, theta) -> PricingErrors:
    """Per-period pricing errors e_t = iota - r_t (G_t' theta) and their mean."""
    if r.t_len != G.t_len:
        raise DimensionMismatch("returns and factors must share T")
    theta = as_theta(theta, G.k_factors + 1)
    sdf = G.values @ theta  # (T,)
    per_period = 1.0 - r.values * sdf[:, None]
    return PricingErrors(per_period.mean(axis=0), per_period)


def error_covariance(per_period: np.ndarray) -> np.ndarray:
    """Outer-product average (1/T) sum_t e_t e_t' (no dof correction, no centering)."""
    e = np.asarray(per_period, dtype=float)
    if e.ndim != 2:
        raise DimensionMismatch("per-period errors must be T x N")
    return e.T @ e / e.shape[0]
