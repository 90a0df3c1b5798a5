"""Two-step Bonferroni HJS specification test.

Step 1 inverts the AR statistic over a compact coefficient box to get an
identification-robust confidence set; step 2 takes the infimum of the HJ
objective over the set; step 3 compares against the supremum of per-point
weighted-chi-square quantiles. The split (alpha1, alpha2) satisfies
(1-alpha1)(1-alpha2) = 1-alpha.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.stats import chi2

from . import wchi2
from .classic import ArEvaluator, theta_covariance, _theta_and_delta
from .errors import DimensionMismatch
from .linalg import chol_lower, symmetrize
from .moments import compute_moments, error_covariance, pricing_errors
from .panels import FactorPanel, ReturnPanel, align, augment

GRID_POINT_CAP = 2_000_000


@dataclass(frozen=True)
class ThetaGrid:
    """Full-factorial grid over a per-coordinate box [lo, hi]."""

    bounds: np.ndarray          # (dims, 2)
    points_per_dim: int
    points: np.ndarray          # (P, dims)
    two_stage: bool = False     # coarse grid to be refined around CS members

    @property
    def dims(self) -> int:
        return self.bounds.shape[0]

    @property
    def spacing(self) -> np.ndarray:
        return (self.bounds[:, 1] - self.bounds[:, 0]) / max(self.points_per_dim - 1, 1)


def default_points_per_dim(dims: int) -> int:
    if dims <= 2:
        return 41
    if dims == 3:
        return 21
    return 11


def _factorial_points(bounds: np.ndarray, ppd: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, ppd) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def make_grid(bounds, points_per_dim: int | None = None) -> ThetaGrid:
    """Build the search grid; above the hard point cap a coarse 11-per-dim
    grid is returned flagged for local refinement around confidence-set
    members."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError("bounds must be rows of [lo, hi] with lo < hi")
    dims = bounds.shape[0]
    ppd = default_points_per_dim(dims) if points_per_dim is None else int(points_per_dim)
    if ppd < 2:
        raise ValueError("points_per_dim must be >= 2")
    if ppd ** dims > GRID_POINT_CAP:
        coarse = 11
        if coarse ** dims > GRID_POINT_CAP:
            raise ValueError(f"{dims} grid dimensions exceed the point cap even at 11/dim")
        return ThetaGrid(bounds, coarse, _factorial_points(bounds, coarse), two_stage=True)
    return ThetaGrid(bounds, ppd, _factorial_points(bounds, ppd))


def auto_bounds(r: ReturnPanel, g: FactorPanel, se_mult: float = 10.0) -> np.ndarray:
    """Coefficient box theta_hat +/- se_mult delta-method standard errors."""
    r, g = align(r, g)
    G = augment(g)
    m = compute_moments(r, G)
    theta, _ = _theta_and_delta(m)
    s = error_covariance(pricing_errors(r, G, theta).per_period)
    cov = theta_covariance(m, s)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    floor = np.maximum(1e-6, 1e-3 * np.abs(theta))
    se = np.maximum(se, floor)
    return np.stack([theta - se_mult * se, theta + se_mult * se], axis=1)


@dataclass(frozen=True)
class RobustConfidenceSet:
    """Grid points whose AR statistic clears the chi-square(N) hurdle."""

    members: np.ndarray        # (M, dims)
    ar_values: np.ndarray      # (M,)
    alpha1: float
    chi2_critical: float
    boundary_contact: bool
    n_singular: int
    bounds: np.ndarray
    spacing: np.ndarray
    s_members: np.ndarray | None = None  # cached per-member S_T(theta)

    @property
    def is_empty(self) -> bool:
        return self.members.shape[0] == 0

    @property
    def size(self) -> int:
        return int(self.members.shape[0])


def _contact(members: np.ndarray, bounds: np.ndarray, spacing: np.ndarray) -> bool:
    if members.size == 0:
        return False
    tol = 0.5 * spacing + 1e-12
    lo_hit = np.abs(members - bounds[:, 0]) <= tol
    hi_hit = np.abs(members - bounds[:, 1]) <= tol
    return bool(np.any(lo_hit | hi_hit))


def invert_ar(r: ReturnPanel, g: FactorPanel, grid: ThetaGrid,
              alpha1: float) -> RobustConfidenceSet:
    """Collect grid points with AR(theta) <= chi2(N) quantile at 1 - alpha1.

    Points with a numerically singular S_T(theta) are excluded and counted.
    An empty set is a legitimate outcome, carried in the result. For a
    two-stage (capped) grid, a local 5-per-dim refinement runs around every
    coarse member before membership is finalized.
    """
    r, g = align(r, g)
    G = augment(g)
    if r.t_len != G.t_len:
        raise DimensionMismatch("aligned panels required")
    ev = ArEvaluator(r, G)
    crit = float(chi2.ppf(1.0 - alpha1, r.n_assets))

    points = grid.points
    ar, _, covs = ev.ar_many(points, keep_s=not grid.two_stage)
    n_singular = int(np.sum(np.isinf(ar)))
    mask = ar <= crit
    members = points[mask]
    ar_members = ar[mask]
    s_members = covs[mask] if covs is not None else None
    spacing = grid.spacing

    if grid.two_stage and members.shape[0] > 0:
        locals_ = []
        offsets = np.asarray(list(itertools.product(np.linspace(-0.5, 0.5, 5),
                                                    repeat=grid.dims)))
        for center in members:
            locals_.append(center[None, :] + offsets * spacing[None, :])
        extra = np.concatenate(locals_, axis=0)
        extra = np.clip(extra, grid.bounds[:, 0], grid.bounds[:, 1])
        extra = np.unique(np.round(extra, 12), axis=0)
        ar_extra, _, _ = ev.ar_many(extra)
        n_singular += int(np.sum(np.isinf(ar_extra)))
        mask_e = ar_extra <= crit
        members = np.concatenate([members, extra[mask_e]], axis=0)
        ar_members = np.concatenate([ar_members, ar_extra[mask_e]])
        _, idx = np.unique(np.round(members, 12), axis=0, return_index=True)
        members = members[np.sort(idx)]
        ar_members = ar_members[np.sort(idx)]
        spacing = spacing / 4.0

    return RobustConfidenceSet(
        members=members,
        ar_values=ar_members,
        alpha1=alpha1,
        chi2_critical=crit,
        boundary_contact=_contact(members, grid.bounds, spacing),
        n_singular=n_singular,
        bounds=grid.bounds,
        spacing=spacing,
        s_members=s_members,
    )


def hjs_statistic(r: ReturnPanel, g: FactorPanel, cs: RobustConfidenceSet) -> float:
    """T times the minimum HJ objective over the confidence set (+inf if empty)."""
    if cs.is_empty:
        return math.inf
    r, g = align(r, g)
    G = augment(g)
    m = compute_moments(r, G)
    low = chol_lower(m.q_r)
    b = sla.solve_triangular(low, m.q_gt, lower=True)
    a = sla.solve_triangular(low, np.ones(m.n_assets), lower=True)
    resid = a[:, None] - b @ cs.members.T
    deltas = np.einsum("np,np->p", resid, resid)
    return float(m.t_len * deltas.min())


def _member_weight_rows(r: ReturnPanel, G, cs: RobustConfidenceSet) -> np.ndarray:
    """Per-member eigenweights of S_T(theta)^{1/2} Qr^-1 S_T(theta)^{1/2}'."""
    m = compute_moments(r, G)
    covs = cs.s_members
    if covs is None or covs.shape[0] != cs.members.shape[0]:
        ev = ArEvaluator(r, G)
        _, _, covs = ev.ar_many(cs.members, keep_s=True)
    low = chol_lower(m.q_r)
    n = m.n_assets
    mm = covs.shape[0]
    # L^-1 S: solve on the left for every member at once
    flat = covs.transpose(1, 0, 2).reshape(n, mm * n)
    half = sla.solve_triangular(low, flat, lower=True).reshape(n, mm, n).transpose(1, 0, 2)
    # (L^-1 S) L'^-1 = (L^-1 (L^-1 S)')'
    flat2 = half.transpose(2, 0, 1).reshape(n, mm * n)
    full = sla.solve_triangular(low, flat2, lower=True).reshape(n, mm, n).transpose(1, 2, 0)
    full = 0.5 * (full + full.transpose(0, 2, 1))
    rows = np.linalg.eigvalsh(full)
    return np.clip(rows, 0.0, None)


def hjs_critical(r: ReturnPanel, g: FactorPanel, cs: RobustConfidenceSet,
                 alpha2: float, *, exact_all: bool = False) -> tuple[float, dict]:
    """sup over members of the 1-alpha2 weighted-chi-square quantile.

    Per-point weights are the N eigenvalues of the S_T(theta) sandwich with
    the returns second moment as weighting (no projector deflation).
    """
    if cs.is_empty:
        raise ValueError("confidence set is empty; the test rejects outright")
    r, g = align(r, g)
    G = augment(g)
    rows = _member_weight_rows(r, G, cs)
    value, info = wchi2.max_quantile(rows, 1.0 - alpha2, exact_all=exact_all)
    return float(value), info


@dataclass(frozen=True)
class HjsResult:
    statistic: float            # T * min HJ objective over the set (may be +inf)
    critical: float             # sup of per-point quantiles (nan when set empty)
    reject: bool
    cs_size: int
    alpha: float
    alpha1: float
    alpha2: float
    boundary_contact: bool
    n_singular: int
    bounds: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def resolve_alpha_split(alpha: float, alpha_split=None) -> tuple[float, float]:
    """Symmetric split 1 - sqrt(1-alpha) unless an explicit valid pair is given."""
    if alpha_split is None:
        a1 = 1.0 - math.sqrt(1.0 - alpha)
        return a1, a1
    a1, a2 = float(alpha_split[0]), float(alpha_split[1])
    if a1 <= 0.0 or a2 <= 0.0:
        raise ValueError("alpha split components must be positive")
    if abs((1.0 - a1) * (1.0 - a2) - (1.0 - alpha)) > 1e-12:
        raise ValueError("(1-alpha1)(1-alpha2) must equal 1-alpha")
    return a1, a2


def hjs_test(r: ReturnPanel, g: FactorPanel, alpha: float = 0.05,
             alpha_split=None, *, grid: ThetaGrid | None = None,
             bounds=None, points_per_dim: int | None = None,
             exact_all: bool = False) -> HjsResult:
    """Bonferroni HJS specification test; an empty confidence set rejects."""
    alpha1, alpha2 = resolve_alpha_split(alpha, alpha_split)
    r, g = align(r, g)
    if grid is None:
        if bounds is None:
            bounds = auto_bounds(r, g)
        grid = make_grid(bounds, points_per_dim)
    cs = invert_ar(r, g, grid, alpha1)
    stat = hjs_statistic(r, g, cs)
    if cs.is_empty:
        return HjsResult(math.inf, math.nan, True, 0, alpha, alpha1, alpha2,
                         cs.boundary_contact, cs.n_singular, grid.bounds,
                         {"empty_confidence_set": True})
    critical, info = hjs_critical(r, g, cs, alpha2, exact_all=exact_all)
    return HjsResult(stat, critical, bool(stat > critical), cs.size, alpha,
                     alpha1, alpha2, cs.boundary_contact, cs.n_singular,
                     grid.bounds, dict(info))
