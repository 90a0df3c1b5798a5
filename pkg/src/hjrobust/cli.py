"""Command-line interface.

Subcommands: `test` (hj/hjs/hjn/jtest on CSV panels), `rolling` (windowed
CRR diagnostics plus p-values), `simulate` (size/power experiments from a
JSON spec), and `fourpass` (estimator report). Single-test reports are JSON
on stdout; grids and rolling results are CSV. Exit code 0 means the command
completed (whatever the test decision); numerical/ingestion failures exit 2
with a structured error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import classic, fourpass, hjn, hjs, report, sim
from .errors import HjrobustError
from .moments import compute_moments, error_covariance, pricing_errors
from .panels import align, augment, load_panel_csv
from .wchi2 import WeightVector

ENV_SEED = "HJROBUST_SEED"


def _parse_selector(text: str) -> list[int]:
    """Parse '0..24' (inclusive) or '0,3,7' into an index list."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",") if x.strip() != ""]


def _parse_bounds(text: str, dims: int):
    if text == "auto":
        return None
    rows = []
    for part in text.split(","):
        lo, hi = part.split(":")
        rows.append((float(lo), float(hi)))
    if len(rows) != dims:
        raise ValueError(f"--grid-bounds needs {dims} lo:hi pairs, got {len(rows)}")
    return np.asarray(rows)


def _parse_phi(text: str):
    if text == "default":
        return None
    a, b = (float(x) for x in text.split(":"))
    return lambda n, t: n ** (-a) + t ** (-b)


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get(ENV_SEED)
    return int(env) if env else 0


def _load_pair(args):
    r = load_panel_csv(args.returns, kind="returns", percent_mode=args.percent)
    g = load_panel_csv(args.factors, kind="factors", percent_mode=args.percent)
    return align(r, g)


def _emit(args, text: str):
    if getattr(args, "output", None):
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_test(args) -> int:
    r, g = _load_pair(args)
    name = args.test_name
    if name == "hj":
        res = classic.hj_test(r, g, args.alpha)
        rep = report.build_report(
            "hj", statistic=res.scaled_stat, p_value=res.p_value,
            critical_value=res.critical_value, alpha=args.alpha, reject=res.reject,
            weights=list(res.weights.weights),
            config={"n_assets": r.n_assets, "k_factors": g.k_factors,
                    "t_len": r.t_len, "delta_sq": res.delta_sq,
                    "theta_hat": list(res.theta_hat)},
            warnings=res.warnings)
    elif name == "hjs":
        dims = g.k_factors + 1
        bounds = _parse_bounds(args.grid_bounds, dims)
        res = hjs.hjs_test(r, g, args.alpha,
                           alpha_split=(args.alpha1, args.alpha2)
                           if args.alpha1 is not None else None,
                           bounds=bounds, points_per_dim=args.grid_points)
        warns = []
        if res.boundary_contact:
            warns.append("boundary_contact")
        if res.cs_size == 0:
            warns.append("empty_confidence_set")
        if res.n_singular:
            warns.append("singular_grid_points")
        rep = report.build_report(
            "hjs", statistic=res.statistic, p_value=None,
            critical_value=res.critical, alpha=args.alpha, reject=res.reject,
            config={"alpha1": res.alpha1, "alpha2": res.alpha2,
                    "cs_size": res.cs_size, "bounds": res.bounds,
                    "grid_points": args.grid_points,
                    "n_singular": res.n_singular},
            warnings=warns)
    elif name == "hjn":
        cfg = hjn.HjnConfig(
            base=tuple(_parse_selector(args.base)) if args.base else None,
            testing=tuple(_parse_selector(args.testing)) if args.testing else None,
            alpha=args.alpha, k_max=args.kmax, phi=_parse_phi(args.phi),
            k_override=args.k_override)
        res = hjn.hjn_test(r, g, cfg)
        rep = report.build_report(
            "hjn", statistic=res.statistic, p_value=res.p_value,
            critical_value=res.critical_value, alpha=args.alpha, reject=res.reject,
            weights=list(res.weights.weights),
            config={"n_testing": res.weights.source_rank, "k_hat": res.k_hat,
                    "theta_tilde": list(res.theta_tilde),
                    "base": args.base, "testing": args.testing},
            warnings=res.warnings)
    elif name == "jtest":
        dims = g.k_factors + 1
        bounds = _parse_bounds(args.grid_bounds, dims)
        if bounds is None:
            bounds = hjs.auto_bounds(r, g)
        grid = hjs.make_grid(bounds, args.grid_points)
        res = classic.j_test(r, g, grid, args.alpha, df_mode=args.j_df)
        warns = ["singular_grid_points"] if res.n_singular else []
        rep = report.build_report(
            "jtest", statistic=res.statistic, p_value=res.p_value,
            critical_value=res.critical_value, alpha=args.alpha, reject=res.reject,
            df=res.df,
            config={"bounds": bounds, "theta_min": list(res.theta_min),
                    "df_mode": args.j_df, "refined": res.refined},
            warnings=warns)
    else:
        raise ValueError(f"unknown test {name!r}")
    _emit(args, report.render(rep))
    return 0


def cmd_fourpass(args) -> int:
    r, g = _load_pair(args)
    fp = fourpass.four_pass(r, g, k_max=args.kmax, phi=_parse_phi(args.phi),
                            k_override=args.k_override)
    G = augment(g)
    m = compute_moments(r, G)
    theta_classic = classic.theta_hat(m)
    v_g = np.cov(g.values, rowvar=False, ddof=0)
    v_g = np.atleast_2d(v_g)
    premia = fourpass.risk_premia(fp.theta_tilde, v_g)
    sigma, warns = fourpass.sigma_theta(fp)
    out = {
        "test_name": "fourpass",
        "k_hat": fp.k_hat,
        "objective_curve": None if fp.factor_count is None
                           else list(fp.factor_count.objective_curve),
        "penalty_value": None if fp.factor_count is None
                         else fp.factor_count.penalty_value,
        "theta_tilde": list(fp.theta_tilde),
        "theta_sub": [list(row) for row in fp.theta_sub],
        "theta_hat_classic": list(theta_classic),
        "lambda_tilde": list(premia.lambda_tilde),
        "v_g": [list(row) for row in premia.v_g],
        "sigma_theta_diag": list(np.diag(sigma)),
        "warnings": sorted(warns),
        "config": {"k_max": args.kmax, "k_override": args.k_override,
                   "phi": args.phi, "n_assets": r.n_assets, "t_len": r.t_len},
    }
    _emit(args, json.dumps(out, indent=2, sort_keys=True, allow_nan=False))
    return 0


def cmd_rolling(args) -> int:
    r = load_panel_csv(args.returns, kind="returns", percent_mode=args.percent)
    g_full = load_panel_csv(args.factors, kind="factors", percent_mode=args.percent)
    r, g_full = align(r, g_full)
    t = r.t_len
    w, s = args.window, args.step
    if t < w:
        raise HjrobustError(f"need T >= window, got T={t}, window={w}")
    factor_sets = []
    for spec_txt in args.factor_set or [f"all={','.join(g_full.factor_names)}"]:
        name, cols = spec_txt.split("=")
        factor_sets.append((name, [c.strip() for c in cols.split(",")]))
    tests = [x.strip() for x in args.tests.split(",")]
    for tn in tests:
        if tn not in ("hj", "hjn", "jtest"):
            raise HjrobustError(f"rolling supports hj/hjn/jtest p-values, not {tn!r}")

    header = ["window_start", "window_end", "crr1", "crr2", "crr3", "crr4",
              "crr_sum", "status"]
    for tn in tests:
        for fs_name, _ in factor_sets:
            header.append(f"{tn}_{fs_name}_pvalue")

    n_windows = (t - w) // s + 1
    rows = []
    from .panels import FactorPanel, ReturnPanel
    for widx in range(n_windows):
        lo = widx * s
        hi = lo + w
        sub_r = ReturnPanel(r.periods[lo:hi], r.values[lo:hi], r.asset_names)
        row = [r.periods[lo], r.periods[hi - 1]]
        status = "ok"
        try:
            shares = classic.crr(sub_r, 4)
            shares = list(shares) + [math.nan] * (4 - len(shares))
            row.extend([f"{x:.15g}" for x in shares])
            row.append(f"{sum(x for x in shares if not math.isnan(x)):.15g}")
        except Exception as exc:  # degenerate window: report and continue
            row.extend(["nan"] * 5)
            status = f"failed:{type(exc).__name__}"
        pvals = []
        for tn in tests:
            for fs_name, cols in factor_sets:
                try:
                    cut = [g_full.factor_names.index(c) for c in cols]
                    sub_g = FactorPanel(g_full.periods[lo:hi],
                                        g_full.values[lo:hi][:, cut], cols)
                    if tn == "hj":
                        res = classic.hj_test(sub_r, sub_g, args.alpha,
                                              want_critical=False)
                        pvals.append(f"{res.p_value:.15g}")
                    elif tn == "hjn":
                        cfg = hjn.HjnConfig(
                            base=tuple(_parse_selector(args.base)) if args.base else None,
                            testing=tuple(_parse_selector(args.testing))
                            if args.testing else None,
                            alpha=args.alpha, k_max=args.kmax,
                            k_override=args.k_override)
                        res = hjn.hjn_test(sub_r, sub_g, cfg, want_critical=False)
                        pvals.append(f"{res.p_value:.15g}")
                    else:
                        grid = hjs.make_grid(hjs.auto_bounds(sub_r, sub_g),
                                             args.grid_points)
                        res = classic.j_test(sub_r, sub_g, grid, args.alpha)
                        pvals.append(f"{res.p_value:.15g}")
                except Exception as exc:
                    pvals.append("nan")
                    status = f"failed:{type(exc).__name__}"
        row.insert(7, status)
        row.extend(pvals)
        rows.append(row)

    out = sys.stdout if not args.output else open(args.output, "w", newline="",
                                                  encoding="utf-8")
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if args.output:
            out.close()
    return 0


def _expand_experiment(spec: dict):
    for field in ("reps", "alpha", "tests"):
        if field not in spec:
            raise HjrobustError(f"experiment spec missing required field {field!r}")
    if "cells" not in spec and "base_cell" not in spec:
        raise HjrobustError("experiment spec missing required field 'cells' (or 'base_cell')")
    raw_cells = spec.get("cells")
    if raw_cells is None:
        base = spec["base_cell"]
        axes = spec.get("axes", {})
        raw_cells = [dict(base)]
        for axis, values in axes.items():
            nxt = []
            for cell in raw_cells:
                for v in values:
                    c = json.loads(json.dumps(cell))
                    if axis in ("n_assets", "t_len"):
                        c[axis] = v
                    else:
                        c.setdefault("params", {})[axis] = v
                    nxt.append(c)
            raw_cells = nxt
    cells = []
    for i, c in enumerate(raw_cells):
        for field in ("variant", "n_assets", "t_len"):
            if field not in c:
                raise HjrobustError(f"experiment cell {i} missing required field {field!r}")
        cells.append(sim.build_spec(c["variant"], c["n_assets"], c["t_len"],
                                    calibration=c.get("calibration"),
                                    **c.get("params", {})))
    return cells


def cmd_simulate(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    cells = _expand_experiment(spec)
    reps = args.reps if args.reps is not None else int(spec["reps"])
    seed = args.seed if args.seed is not None else int(spec.get("master_seed", _seed(args)))
    alpha = float(spec["alpha"])
    print(f"running {len(cells)} cells x {reps} reps", file=sys.stderr)
    result = sim.run_experiment(cells, spec["tests"], reps, alpha, seed,
                                jobs=args.jobs)
    os.makedirs(args.output, exist_ok=True)
    rows = result.to_rows()
    keys = sorted({k for row in rows for k in row})
    csv_path = os.path.join(args.output, "result.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, restval="")
        writer.writeheader()
        writer.writerows(rows)
    json_path = os.path.join(args.output, "result.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hjrobust",
        description="Weak-factor-robust specification tests for linear asset-pricing models.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(q, with_grid=True, with_fourpass=True):
        q.add_argument("--alpha", type=float, default=0.05)
        q.add_argument("--percent", dest="percent", action="store_true", default=True,
                       help="cells are percentages: returns become 1+p/100, factors p/100 (default)")
        q.add_argument("--no-percent", dest="percent", action="store_false",
                       help="cells are used as-is (gross returns / raw factors)")
        q.add_argument("--seed", type=int, default=None,
                       help=f"master seed (fallback: ${ENV_SEED}, then 0)")
        q.add_argument("--output", "-o", default=None)
        if with_grid:
            q.add_argument("--grid-bounds", default="auto",
                           help='"auto" or comma-separated lo:hi per coefficient')
            q.add_argument("--grid-points", type=int, default=None)
            q.add_argument("--alpha1", type=float, default=None)
            q.add_argument("--alpha2", type=float, default=None)
            q.add_argument("--j-df", choices=["n_minus_k", "n_minus_k_minus_1"],
                           default="n_minus_k")
        if with_fourpass:
            q.add_argument("--kmax", type=int, default=fourpass.DEFAULT_K_MAX)
            q.add_argument("--k-override", type=int, default=None)
            q.add_argument("--phi", default="default",
                           help='"default" (N^-1/4 + T^-1/4) or "a:b" for N^-a + T^-b')
            q.add_argument("--base", default=None, help='base asset selector, e.g. "0..99"')
            q.add_argument("--testing", default=None, help='testing asset selector, e.g. "0..24"')

    q = sub.add_parser("test", help="run a specification test on CSV panels")
    q.add_argument("test_name", choices=["hj", "hjs", "hjn", "jtest"])
    q.add_argument("returns")
    q.add_argument("factors")
    add_common(q)
    q.set_defaults(func=cmd_test)

    q = sub.add_parser("rolling", help="rolling-window CRRs and test p-values")
    q.add_argument("returns")
    q.add_argument("--factors", required=True)
    q.add_argument("--factor-set", action="append", default=None,
                   help='repeatable, "name=Col1,Col2,..."')
    q.add_argument("--window", type=int, required=True)
    q.add_argument("--step", type=int, required=True)
    q.add_argument("--tests", default="hj,hjn")
    add_common(q)
    q.set_defaults(func=cmd_rolling)

    q = sub.add_parser("simulate", help="run a size/power experiment from a JSON spec")
    q.add_argument("spec")
    q.add_argument("--output", "-o", required=True)
    q.add_argument("--reps", type=int, default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--jobs", type=int, default=1)
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("fourpass", help="four-pass estimator report")
    q.add_argument("returns")
    q.add_argument("factors")
    add_common(q, with_grid=False)
    q.set_defaults(func=cmd_fourpass)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HjrobustError, ValueError, OSError) as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        print(json.dumps(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
