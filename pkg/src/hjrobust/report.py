"""Machine-readable test reports and their JSON schema.

Reports are plain dicts rendered deterministically (no wall clock, repr-based
float rendering, sorted keys). Non-finite statistics serialize as the strings
"inf"/"nan" so the output stays valid JSON.
"""

from __future__ import annotations

import json
import math
from importlib import resources

# Closed set of warning codes a report may carry.
WARNING_CODES = (
    "weight_count_mismatch",   # retained eigenweights != analytical count
    "mc_fallback",             # quadrature failed; Monte Carlo critical values used
    "boundary_contact",        # confidence set or minimizer touches the theta box
    "empty_confidence_set",    # AR inversion produced no members (HJS rejects)
    "testing_share_large",     # testing portfolios exceed half the base count
    "theta_var_term_omitted",  # plug-in covariance missing the averaged-theta term
    "singular_grid_points",    # some grid points had singular error covariances
)


def _jsonable(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    return x


def build_report(test_name: str, *, statistic, p_value, critical_value, alpha,
                 reject, weights=None, df=None, config=None, warnings=()) -> dict:
    report = {
        "test_name": test_name,
        "statistic": _jsonable(float(statistic)),
        "p_value": _jsonable(None if p_value is None else float(p_value)),
        "critical_value": _jsonable(None if critical_value is None else float(critical_value)),
        "alpha": float(alpha),
        "reject": bool(reject),
        "config": _jsonable(config or {}),
        "warnings": sorted(set(warnings)),
    }
    if weights is not None:
        report["weights"] = _jsonable(weights)
        report["df"] = None
    else:
        report["weights"] = None
        report["df"] = None if df is None else int(df)
    unknown = set(report["warnings"]) - set(WARNING_CODES)
    if unknown:
        raise ValueError(f"unknown warning codes: {sorted(unknown)}")
    return report


def render(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False)


def load_schema() -> dict:
    text = resources.files("hjrobust").joinpath("report_schema.json").read_text()
    return json.loads(text)
