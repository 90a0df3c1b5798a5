"""Calibrated data-generating processes and the size/power experiment harness.

Three DGP families are supported:

* "LL3"    - three weak proxy factors for three strong latent factors, with
             optional completely useless extra factors; used for statistic
             density comparisons across factor menus.
* "SF1"    - single-factor designs: "proxy" mode draws an observed proxy g
             and builds the latent factor as d_g * g + v (identification
             strength d_g); "direct" mode observes the factor itself with
             loading beta * d_g and a misspecification term beta_perp * d.
* "LATENT" - three observed factors proxying three latent factors (strength
             profile diag(1, 1, d_alpha)), one omitted strong factor, iid
             noise; loadings redrawn every replication.

Calibration bundles are JSON files shipped with the package (synthetic but
realistically scaled) or supplied by the user. Panels are deterministic
given (spec, seed); replication seeds inside experiments are spawned from
the master seed by (cell, rep), so results do not depend on the degree of
parallelism.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import classic, hjs, hjn
from .errors import InvalidCalibration
from .panels import FactorPanel, ReturnPanel, align, select_assets

SHIPPED_CALIBRATIONS = ("kroencke_style", "latent_style", "ll3_style")


# --- calibration bundles -----------------------------------------------------

def load_calibration(source: str) -> dict:
    """Load a calibration bundle by shipped name or file path."""
    if source in SHIPPED_CALIBRATIONS:
        text = resources.files("hjrobust.calibrations").joinpath(f"{source}.json").read_text()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    return json.loads(text)


def _as_psd(a, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1] or not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise InvalidCalibration(f"{name} must be symmetric")
    vals = np.linalg.eigvalsh(0.5 * (a + a.T))
    if vals.min() < -1e-10 * max(vals.max(), 1e-300):
        raise InvalidCalibration(f"{name} must be positive semidefinite")
    return 0.5 * (a + a.T)


def _psd_factor(a: np.ndarray) -> np.ndarray:
    """Deterministic factor F with F F' = a for PSD a (eigh-based)."""
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class DgpSpec:
    variant: str
    n_assets: int
    t_len: int
    params: dict = field(default_factory=dict)

    def label(self) -> dict:
        keep = {k: v for k, v in self.params.items()
                if isinstance(v, (int, float, str, bool))}
        return {"variant": self.variant, "n_assets": self.n_assets,
                "t_len": self.t_len, **keep}


def build_spec(variant: str, n_assets: int, t_len: int, calibration=None,
               **overrides) -> DgpSpec:
    """Assemble a DgpSpec, merging a calibration bundle with overrides."""
    params: dict = {}
    if calibration is not None:
        bundle = calibration if isinstance(calibration, dict) else load_calibration(calibration)
        params.update(bundle)
    params.update(overrides)
    if variant not in ("LL3", "SF1", "LATENT"):
        raise ValueError(f"unknown DGP variant {variant!r}")
    return DgpSpec(variant, int(n_assets), int(t_len), params)


def _periods(t: int) -> list[str]:
    return [f"{i:06d}" for i in range(t)]


def beta_perp(beta: np.ndarray, norm: float) -> np.ndarray:
    """Unit vector orthogonal to span{iota, beta}, scaled to `norm`.

    First column of a deterministic orthonormal complement basis (full QR of
    [iota, beta]), sign fixed so the largest-magnitude entry is positive.
    """
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[0] == 1:
        beta = beta.T
    n = beta.shape[0]
    m = np.column_stack([np.ones(n), beta])
    q, _ = np.linalg.qr(m, mode="complete")
    v = q[:, m.shape[1]]
    lead = v[np.argmax(np.abs(v))]
    if lead < 0:
        v = -v
    return v * norm


def simulate_dgp(spec: DgpSpec, seed) -> tuple[ReturnPanel, FactorPanel, dict]:
    """Simulate one dataset; deterministic given (spec, seed).

    Returns (returns, observed factors, truth record). The truth record
    carries the population SDF coefficients theta_g (None when the emitted
    factor menu does not satisfy the pricing moment conditions), the premia,
    and the drawn loadings.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    if spec.variant == "SF1":
        return _simulate_sf1(spec, rng)
    if spec.variant == "LL3":
        return _simulate_ll3(spec, rng)
    if spec.variant == "LATENT":
        return _simulate_latent(spec, rng)
    raise ValueError(f"unknown DGP variant {spec.variant!r}")


def _subset_cov(v, n, name):
    v = _as_psd(v, name)
    if v.shape[0] < n:
        raise InvalidCalibration(f"{name} covers {v.shape[0]} assets, need {n}")
    return v[:n, :n]


def _simulate_sf1(spec: DgpSpec, rng) -> tuple[ReturnPanel, FactorPanel, dict]:
    p = spec.params
    n, t = spec.n_assets, spec.t_len
    mode = p.get("mode", "direct")
    v_f = float(p["v_f"])
    lam = float(p["lam"])
    d_g = float(p.get("d_g", 1.0))
    d = float(p.get("d", 0.0))
    beta = np.asarray(p["beta"], dtype=float).reshape(-1)[:n]
    if beta.shape[0] < n:
        raise InvalidCalibration(f"beta covers {beta.shape[0]} assets, need {n}")
    v_u = _subset_cov(p["v_u"], n, "v_u")
    if v_f <= 0:
        raise InvalidCalibration("v_f must be positive")
    u_fac = _psd_factor(v_u)
    bp = beta_perp(beta, 1.0 / math.sqrt(t))

    if mode == "proxy":
        var_g = v_f / 4.0
        var_v = v_f - d_g * d_g * var_g
        if var_v < 0:
            raise InvalidCalibration("derived omitted-factor variance is negative")
        g = rng.standard_normal(t) * math.sqrt(var_g)
        v = rng.standard_normal(t) * math.sqrt(var_v)
        f = d_g * g + v
        u = rng.standard_normal((t, n)) @ u_fac.T
        r = 1.0 + beta * lam + np.outer(f, beta) + np.outer(np.full(t, d), bp) + u
        observed = g
        theta = None if d_g == 0.0 or d != 0.0 else np.array([1.0, -lam / (d_g * var_g)])
    elif mode == "direct":
        f = rng.standard_normal(t) * math.sqrt(v_f)
        u = rng.standard_normal((t, n)) @ u_fac.T
        r = 1.0 + beta * lam + d * bp + np.outer(f, beta * d_g) + u
        observed = f
        theta = None if d_g == 0.0 or d != 0.0 else np.array([1.0, -lam / (d_g * v_f)])
    else:
        raise InvalidCalibration(f"unknown SF1 mode {mode!r}")

    periods = _periods(t)
    truth = {"theta_g": theta, "lam": lam, "beta": beta, "beta_perp": bp,
             "d": d, "d_g": d_g}
    return (
        ReturnPanel(periods, r, [f"a{i}" for i in range(n)]),
        FactorPanel(periods, observed[:, None], ["g0"]),
        truth,
    )


def _simulate_ll3(spec: DgpSpec, rng) -> tuple[ReturnPanel, FactorPanel, dict]:
    p = spec.params
    n, t = spec.n_assets, spec.t_len
    v_f_cov = _as_psd(p["v_f_cov"], "v_f_cov")
    k = v_f_cov.shape[0]
    lam = np.asarray(p["lam"], dtype=float).reshape(-1)
    beta = np.asarray(p["beta"], dtype=float)[:n]
    if beta.shape[0] < n:
        raise InvalidCalibration("beta does not cover the requested assets")
    v_u = _subset_cov(p["v_u"], n, "v_u")
    proxy_loading = float(p.get("proxy_loading", 0.1))
    omitted_share = float(p.get("omitted_share", 0.99))
    emit = [tuple(e) for e in p.get("emit", [("g", i) for i in range(k)])]

    fac = _psd_factor(v_f_cov)
    g = rng.standard_normal((t, k)) @ fac.T
    v = rng.standard_normal((t, k)) @ (math.sqrt(omitted_share) * fac).T
    f = proxy_loading * g + v
    n_useless = 1 + max((i for s, i in emit if s == "w"), default=-1)
    w = rng.standard_normal((t, n_useless)) @ fac.T if n_useless > 0 else None
    u = rng.standard_normal((t, n)) @ _psd_factor(v_u).T
    r = 1.0 + beta @ lam + f @ beta.T + u

    cols, names = [], []
    for src, i in emit:
        if src == "g":
            cols.append(g[:, i])
        elif src == "f":
            cols.append(f[:, i])
        elif src == "w":
            cols.append(w[:, i])
        else:
            raise InvalidCalibration(f"unknown emit source {src!r}")
        names.append(f"{src}{i}")

    full_g = [("g", i) for i in range(k)]
    full_f = [("f", i) for i in range(k)]
    if emit == full_g:
        theta = np.concatenate(([1.0], -np.linalg.solve(proxy_loading * v_f_cov, lam)))
    elif emit == full_f:
        var_f = (proxy_loading ** 2 + omitted_share) * v_f_cov
        theta = np.concatenate(([1.0], -np.linalg.solve(var_f, lam)))
    else:
        theta = None

    periods = _periods(t)
    truth = {"theta_g": theta, "lam": lam, "beta": beta, "emit": emit}
    return (
        ReturnPanel(periods, r, [f"a{i}" for i in range(n)]),
        FactorPanel(periods, np.column_stack(cols), names),
        truth,
    )


def _simulate_latent(spec: DgpSpec, rng) -> tuple[ReturnPanel, FactorPanel, dict]:
    p = spec.params
    n, t = spec.n_assets, spec.t_len
    d_g = np.asarray(p["d_g"], dtype=float)
    k = d_g.shape[0]
    v_v = _as_psd(p["v_v"], "v_v")
    mu_bg = np.asarray(p["mu_bg"], dtype=float).reshape(-1)
    v_bg = _as_psd(p["v_bg"], "v_bg")
    sigma_e2 = float(p["sigma_e2"])
    lam = np.asarray(p["lam"], dtype=float).reshape(-1)
    d_alpha = float(p.get("d_alpha", 1.0))
    d = float(p.get("d", 0.0))
    if mu_bg.shape[0] != k + 1 or v_bg.shape[0] != k + 1:
        raise InvalidCalibration("loading moments must cover K factors plus one omitted")

    a = np.diag(np.concatenate([np.ones(k - 1), [d_alpha]]))
    ia = np.eye(k) - a
    v_cov = _as_psd(ia @ d_g @ d_g.T @ ia + v_v, "omitted-factor covariance")

    g = rng.standard_normal((t, k))
    v = rng.standard_normal((t, k)) @ _psd_factor(v_cov).T
    f = g @ (a @ d_g).T + v
    z = rng.standard_normal(t)
    loadings = mu_bg + rng.standard_normal((n, k + 1)) @ _psd_factor(v_bg).T
    beta, gamma = loadings[:, :k], loadings[:, k]
    e = rng.standard_normal((t, n)) * math.sqrt(sigma_e2)
    bp = beta_perp(beta, 1.0)

    r = 1.0 + d * bp + beta @ lam + f @ beta.T + np.outer(z, gamma) + e

    ad = a @ d_g
    try:
        theta = np.concatenate(([1.0], -np.linalg.solve(ad, lam)))
        if d != 0.0:
            theta = None
    except np.linalg.LinAlgError:
        theta = None

    periods = _periods(t)
    truth = {"theta_g": theta, "lam": lam, "beta": beta, "gamma": gamma,
             "beta_perp": bp, "d": d, "d_alpha": d_alpha, "k_vz": k + 1}
    return (
        ReturnPanel(periods, r, [f"a{i}" for i in range(n)]),
        FactorPanel(periods, g, [f"g{i}" for i in range(k)]),
        truth,
    )


def simulate_factor_residuals(k: int, n: int, t: int, seed, *,
                              loading_mean=4.0, loading_sd=1.5,
                              noise_sd=2.0) -> np.ndarray:
    """Residual-style matrix with k strong factors plus iid noise.

    Harness input for factor-count recovery experiments; scales mirror the
    shipped latent calibration.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.default_rng(ss)
    out = rng.standard_normal((t, n)) * noise_sd
    for _ in range(k):
        x = rng.standard_normal(t)
        b = loading_mean + rng.standard_normal(n) * loading_sd
        out += np.outer(x, b)
    return out


# --- test handles used by the experiment harness -----------------------------

def make_test_handle(spec: dict):
    """Build a reject-decision callable (r, g, truth, alpha) -> bool.

    Supported names: "hj", "hjs", "jtest", "hjn", "ar_coverage". An optional
    "assets" list restricts the return panel first (used to run HJ on the
    testing portfolios of an HJN comparison). Handles built from plain dicts
    are picklable, so experiments can run across processes.
    """
    return _TestHandle(dict(spec))


class _TestHandle:
    def __init__(self, spec: dict):
        self.spec = spec

    def __call__(self, r, g, truth, alpha) -> bool:
        spec = self.spec
        name = spec["name"]
        if spec.get("assets") is not None:
            r = select_assets(r, spec["assets"])
        if name == "hj":
            return classic.hj_test(r, g, alpha, want_critical=False).reject
        if name == "hjs":
            return hjs.hjs_test(
                r, g, alpha,
                points_per_dim=spec.get("points_per_dim"),
                bounds=spec.get("bounds"),
            ).reject
        if name == "jtest":
            bounds = spec.get("bounds")
            if bounds is None:
                bounds = hjs.auto_bounds(r, g)
            grid = hjs.make_grid(bounds, spec.get("points_per_dim"))
            return classic.j_test(r, g, grid, alpha,
                                  df_mode=spec.get("df_mode", "n_minus_k")).reject
        if name == "hjn":
            cfg = hjn.HjnConfig(
                base=tuple(spec["base"]) if spec.get("base") is not None else None,
                testing=tuple(spec["testing"]) if spec.get("testing") is not None else None,
                alpha=alpha,
                k_max=spec.get("k_max", 10),
                k_override=spec.get("k_override"),
            )
            return hjn.hjn_test(r, g, cfg, want_critical=False).reject
        if name == "ar_coverage":
            # rejects when the true coefficient vector falls outside the AR set
            if truth.get("theta_g") is None:
                raise ValueError("ar_coverage needs a DGP with a well-defined theta_g")
            from scipy.stats import chi2 as _chi2
            val = classic.ar_stat(r, g, truth["theta_g"])
            return bool(val.statistic > _chi2.ppf(1.0 - alpha, val.df))
        raise ValueError(f"unknown test handle {name!r}")


# --- experiment harness ------------------------------------------------------

@dataclass(frozen=True)
class ExperimentResult:
    cells: list
    tests: list
    freq: np.ndarray        # (n_cells, n_tests) rejection frequencies
    failures: np.ndarray    # (n_cells, n_tests) failed replications
    reps: int
    alpha: float
    master_seed: int

    def mc_se(self) -> np.ndarray:
        p = self.freq
        return np.sqrt(p * (1.0 - p) / self.reps)

    def to_rows(self) -> list[dict]:
        rows = []
        se = self.mc_se()
        for i, cell in enumerate(self.cells):
            for j, test in enumerate(self.tests):
                rows.append({**cell, "test": test,
                             "rejection_frequency": float(self.freq[i, j]),
                             "mc_se": float(se[i, j]),
                             "failures": int(self.failures[i, j]),
                             "reps": self.reps})
        return rows

    def to_json_dict(self) -> dict:
        return {"reps": self.reps, "alpha": self.alpha,
                "master_seed": self.master_seed, "rows": self.to_rows()}


def _run_cell_range(args):
    spec, test_specs, cell_idx, rep_lo, rep_hi, master_seed, alpha = args
    handles = [make_test_handle(ts) for ts in test_specs]
    hits = np.zeros(len(handles), dtype=np.int64)
    fails = np.zeros(len(handles), dtype=np.int64)
    for rep in range(rep_lo, rep_hi):
        ss = np.random.SeedSequence(master_seed, spawn_key=(cell_idx, rep))
        r, g, truth = simulate_dgp(spec, ss)
        for j, h in enumerate(handles):
            try:
                hits[j] += int(h(r, g, truth, alpha))
            except Exception:
                fails[j] += 1
    return cell_idx, hits, fails


def run_experiment(cells, tests, reps: int, alpha: float, master_seed: int,
                   jobs: int = 1) -> ExperimentResult:
    """Rejection frequencies per (cell, test) over seeded replications.

    cells: list of DgpSpec. tests: list of handle-spec dicts (see
    make_test_handle) or (name, callable) pairs; callables require jobs=1.
    Per-replication failures are counted, not fatal. Results are bitwise
    independent of the jobs count because every replication owns a seed
    spawned from (master_seed, cell index, rep index).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    cells = list(cells)
    test_specs, test_names, custom = [], [], []
    for tspec in tests:
        if isinstance(tspec, dict):
            test_specs.append(tspec)
            test_names.append(tspec.get("label", tspec["name"]))
        else:
            name, fn = tspec
            custom.append((name, fn))
            test_names.append(name)
    if custom and jobs > 1:
        raise ValueError("custom callable tests require jobs=1")

    n_tests = len(test_names)
    freq = np.zeros((len(cells), n_tests))
    fails = np.zeros((len(cells), n_tests), dtype=np.int64)

    if custom:
        # single-process path supporting arbitrary callables
        for ci, spec in enumerate(cells):
            handles = [make_test_handle(ts) for ts in test_specs] + [fn for _, fn in custom]
            for rep in range(reps):
                ss = np.random.SeedSequence(master_seed, spawn_key=(ci, rep))
                r, g, truth = simulate_dgp(spec, ss)
                for j, h in enumerate(handles):
                    try:
                        freq[ci, j] += int(h(r, g, truth, alpha))
                    except Exception:
                        fails[ci, j] += 1
        freq /= reps
        return ExperimentResult([c.label() for c in cells], test_names, freq,
                                fails, reps, alpha, master_seed)

    chunk = max(1, reps // max(jobs * 4, 1)) if jobs > 1 else reps
    tasks = []
    for ci, spec in enumerate(cells):
        for lo in range(0, reps, chunk):
            tasks.append((spec, test_specs, ci, lo, min(lo + chunk, reps),
                          master_seed, alpha))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_cell_range, tasks))
    else:
        results = [_run_cell_range(t) for t in tasks]
    hit_acc = np.zeros((len(cells), n_tests), dtype=np.int64)
    for ci, hits, f in results:
        hit_acc[ci] += hits
        fails[ci] += f
    freq = hit_acc / reps
    return ExperimentResult([c.label() for c in cells], test_names, freq,
                            fails, reps, alpha, master_seed)


def density_profile(spec: DgpSpec, statistic, reps: int, seed: int) -> dict:
    """Sorted simulated statistic values plus summary quantiles.

    statistic may be "hj_scaled" (T times the minimized HJ objective) or a
    callable (r, g) -> float. Deterministic given seed.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100 for a usable profile")
    if statistic == "hj_scaled":
        def statistic(r, g):
            from .moments import compute_moments
            from .panels import augment
            r2, g2 = align(r, g)
            m = compute_moments(r2, augment(g2))
            return m.t_len * classic.hj_distance_sq(m)
    vals = np.empty(reps)
    for rep in range(reps):
        ss = np.random.SeedSequence(seed, spawn_key=(rep,))
        r, g, _ = simulate_dgp(spec, ss)
        vals[rep] = statistic(r, g)
    vals.sort()
    grid = [0.05, 0.25, 0.5, 0.75, 0.95]
    return {"values": vals,
            "quantiles": {str(q): float(np.quantile(vals, q)) for q in grid}}
