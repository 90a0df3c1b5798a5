"""Return/factor panel containers, CSV ingestion, alignment and factor augmentation.

Period labels are opaque sortable strings (e.g. "196301" or "1963-01"); the
library never does calendar arithmetic, only ordering and window slicing.
Panels are balanced by construction: missing or non-numeric cells are errors,
never imputed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyPanel, MalformedCsv, NoOverlap


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _validate(periods, values, names, label):
    if values.ndim != 2:
        raise ValueError(f"{label}: values must be 2-D, got shape {values.shape}")
    t_len, width = values.shape
    if t_len < 2:
        raise ValueError(f"{label}: need at least 2 periods, got {t_len}")
    if width < 1:
        raise ValueError(f"{label}: need at least one column")
    if len(periods) != t_len:
        raise ValueError(f"{label}: {len(periods)} period labels for {t_len} rows")
    if len(names) != width:
        raise ValueError(f"{label}: {len(names)} names for {width} columns")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{label}: non-finite entries present")
    for a, b in zip(periods, periods[1:]):
        if not a < b:
            raise ValueError(f"{label}: periods not strictly increasing at {a!r} >= {b!r}")


@dataclass(frozen=True)
class ReturnPanel:
    """T x N panel of gross asset returns with ordered period labels."""

    periods: tuple[str, ...]
    values: np.ndarray
    asset_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(str(p) for p in self.periods))
        object.__setattr__(self, "asset_names", tuple(str(n) for n in self.asset_names))
        object.__setattr__(self, "values", _freeze(np.asarray(self.values)))
        _validate(self.periods, self.values, self.asset_names, "ReturnPanel")

    @property
    def t_len(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FactorPanel:
    """T x K panel of proxy-factor observations with ordered period labels."""

    periods: tuple[str, ...]
    values: np.ndarray
    factor_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "periods", tuple(str(p) for p in self.periods))
        object.__setattr__(self, "factor_names", tuple(str(n) for n in self.factor_names))
        object.__setattr__(self, "values", _freeze(np.asarray(self.values)))
        _validate(self.periods, self.values, self.factor_names, "FactorPanel")

    @property
    def t_len(self) -> int:
        return self.values.shape[0]

    @property
    def k_factors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class AugmentedFactors:
    """T x (K+1) design [1, demeaned factors] plus the removed factor mean."""

    values: np.ndarray
    factor_mean: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        mean = np.atleast_1d(np.asarray(self.factor_mean, dtype=float))
        if vals.ndim != 2 or vals.shape[1] != mean.shape[0] + 1:
            raise DimensionMismatch("augmented factor matrix width must be K+1")
        t_len = vals.shape[0]
        if not np.all(vals[:, 0] == 1.0):
            raise ValueError("first augmented column must be exactly 1")
        colsums = np.abs(vals[:, 1:].sum(axis=0))
        if colsums.size and colsums.max() > 1e-10 * t_len:
            raise ValueError("demeaned factor columns must sum to ~0")
        object.__setattr__(self, "values", _freeze(vals))
        object.__setattr__(self, "factor_mean", _freeze(mean))

    @property
    def t_len(self) -> int:
        return self.values.shape[0]

    @property
    def k_factors(self) -> int:
        return self.values.shape[1] - 1


def load_panel_csv(path, kind="returns", date_col=None, value_cols=None,
                   percent_mode=True):
    """Load a panel from CSV (one header row; first column = period by default).

    percent_mode (the Ken-French-style default) converts return cells p to
    gross returns 1 + p/100 and factor cells to p/100.

    Returns a ReturnPanel for kind="returns", a FactorPanel for kind="factors".
    """
    if kind not in ("returns", "factors"):
        raise ValueError(f"kind must be 'returns' or 'factors', got {kind!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmptyPanel(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise MalformedCsv(f"{path}: header must contain a period column and data columns")
    date_col = header[0] if date_col is None else date_col
    if date_col not in header:
        raise MalformedCsv(f"{path}: period column {date_col!r} not in header")
    date_idx = header.index(date_col)
    if value_cols is None:
        value_cols = [h for i, h in enumerate(header) if i != date_idx]
    missing = [c for c in value_cols if c not in header]
    if missing:
        raise MalformedCsv(f"{path}: value columns not in header: {missing}")
    if not value_cols:
        raise EmptyPanel(f"{path}: no value columns selected")
    col_idx = [header.index(c) for c in value_cols]

    periods, data = [], []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise MalformedCsv(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        periods.append(row[date_idx].strip())
        vals = []
        for c in col_idx:
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                raise MalformedCsv(f"{path}: row {r}: cell {cell!r} is not a number") from None
            if not np.isfinite(v):
                raise MalformedCsv(f"{path}: row {r}: non-finite value {cell!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise EmptyPanel(f"{path}: no data rows")
    if len(set(periods)) != len(periods):
        seen, dup = set(), None
        for p in periods:
            if p in seen:
                dup = p
                break
            seen.add(p)
        raise MalformedCsv(f"{path}: duplicate period {dup!r}")

    order = np.argsort(np.asarray(periods, dtype=object))
    values = np.asarray(data, dtype=float)[order]
    periods = [periods[i] for i in order]
    if percent_mode:
        values = 1.0 + values / 100.0 if kind == "returns" else values / 100.0
    if kind == "returns":
        return ReturnPanel(periods, values, value_cols)
    return FactorPanel(periods, values, value_cols)


def write_panel_csv(panel, path, date_col="period"):
    """Write a panel as CSV with 15-significant-digit decimal rendering.

    Loading the output back with percent_mode=False reproduces the stored
    float values bit-exactly for inputs that were finite decimals with at
    most 15 significant digits.
    """
    names = panel.asset_names if isinstance(panel, ReturnPanel) else panel.factor_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([date_col, *names])
        for p, row in zip(panel.periods, panel.values):
            w.writerow([p, *(f"{v:.15g}" for v in row)])


def align(r: ReturnPanel, g: FactorPanel) -> tuple[ReturnPanel, FactorPanel]:
    """Restrict both panels to their sorted common periods."""
    common = sorted(set(r.periods) & set(g.periods))
    if not common:
        raise NoOverlap("return and factor panels share no periods")
    if common == list(r.periods) == list(g.periods):
        return r, g
    r_pos = {p: i for i, p in enumerate(r.periods)}
    g_pos = {p: i for i, p in enumerate(g.periods)}
    r_rows = [r_pos[p] for p in common]
    g_rows = [g_pos[p] for p in common]
    return (
        ReturnPanel(common, r.values[r_rows], r.asset_names),
        FactorPanel(common, g.values[g_rows], g.factor_names),
    )


def select_assets(r: ReturnPanel, idx) -> ReturnPanel:
    """Column subset of a return panel (order follows idx)."""
    idx = list(idx)
    if not idx:
        raise EmptyPanel("asset selection is empty")
    names = [r.asset_names[i] for i in idx]
    return ReturnPanel(r.periods, r.values[:, idx], names)


def augment(g: FactorPanel) -> AugmentedFactors:
    """Prepend a unit column and demean each factor by its own sample mean."""
    mean = g.values.mean(axis=0)
    demeaned = g.values - mean
    # enforce exact zero column sums so the invariant is not at the mercy of
    # accumulated rounding for long samples
    demeaned = demeaned - demeaned.mean(axis=0)
    out = np.empty((g.t_len, g.k_factors + 1))
    out[:, 0] = 1.0
    out[:, 1:] = demeaned
    return AugmentedFactors(out, mean)
