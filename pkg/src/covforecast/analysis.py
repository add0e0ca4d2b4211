"""Correlation analyses around the forecasting model.

* pairwise covariate correlation (full and health-only subsets, pairplot data)
* per-city peak daily cases/deaths per capita against a covariate
* Past / Now / Future correlation of sqrt-domain, population-normed daily
  rates with each covariate
"""
from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import CovariateTable, step_features
from .model import predict_city
from .registry import HEALTH_FACTORS

UNDEFINED = "undefined"
PERIOD_COLUMNS = ("past_case", "now_case", "future_case", "past_death", "now_death", "future_death")


def pearson(x, y):
    """Pearson coefficient; NaN when either input has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-d arrays of equal length")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx <= 0.0 or syy <= 0.0:
        return float("nan")
    r = (dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def correlate(x, y, method="pearson"):
    if method == "spearman":
        return pearson(rankdata(x), rankdata(y))
    if method != "pearson":
        raise ValueError(f"unknown correlation method {method!r}")
    return pearson(x, y)


@dataclass(frozen=True)
class CorrelationMatrix:
    factors: tuple
    values: np.ndarray
    defined: np.ndarray

    def __getitem__(self, pair):
        a, b = pair
        return self.values[self.factors.index(a), self.factors.index(b)]

    @property
    def undefined_factors(self):
        return tuple(f for f, ok in zip(self.factors, np.diag(self.defined)) if not ok)


def correlation_matrix(columns, names, method="pearson"):
    """Pairwise correlation of the columns of ``columns`` (observations x variables)."""
    X = np.asarray(columns, dtype=float)
    k = X.shape[1]
    if X.shape[0] < 3:
        raise ValueError("need at least 3 observations for a correlation analysis")
    if method == "spearman":
        X = np.column_stack([rankdata(X[:, j]) for j in range(k)])
    values = np.full((k, k), np.nan)
    for a in range(k):
        for b in range(a, k):
            r = pearson(X[:, a], X[:, b])
            if a == b and np.isfinite(r):
                r = 1.0
            values[a, b] = values[b, a] = r
    return CorrelationMatrix(tuple(names), values, np.isfinite(values))


def covariate_correlation(table, factors=None, method="pearson"):
    """Correlation of covariates across cities.

    ``table`` is a :class:`CovariateTable` (or anything with ``factors`` and
    ``values``). Zero-variance factors get undefined entries in their row and
    column only.
    """
    factors = tuple(factors or table.factors)
    cols = [table.factors.index(f) for f in factors]
    return correlation_matrix(np.asarray(table.values)[:, cols], factors, method)


def correlation_views(table, method="pearson"):
    """The full socio-economic + health matrix and the health-only one."""
    health = [f for f in table.factors if f in HEALTH_FACTORS]
    views = {"full": covariate_correlation(table, None, method)}
    if len(health) >= 2:
        views["health"] = covariate_correlation(table, health, method)
    return views


def pairplot_data(table, factors=None):
    """Long-form rows ``(fips, factor_x, factor_y, x, y)`` for every ordered factor pair."""
    factors = tuple(factors or table.factors)
    rows = []
    for a in factors:
        xa = table.column(a)
        for b in factors:
            if a == b:
                continue
            xb = table.column(b)
            rows.extend((f, a, b, float(u), float(v)) for f, u, v in zip(table.fips, xa, xb))
    return rows


@dataclass(frozen=True)
class BivariatePoint:
    fips: str
    covariate: float
    peak_cases_pc: float
    peak_deaths_pc: float


def max_bivariate(daily_cases, daily_deaths, covariate, populations, fips):
    """Peak daily cases and deaths per capita for each city, paired with its covariate value.

    ``daily_cases``/``daily_deaths`` are ``(cities, days)`` arrays, either
    observed or model-produced.
    """
    cases = np.asarray(daily_cases, dtype=float)
    deaths = np.asarray(daily_deaths, dtype=float)
    pops = np.asarray(populations, dtype=float)
    cov = np.asarray(covariate, dtype=float)
    out = []
    for k, f in enumerate(fips):
        pc = max(float(np.max(cases[k])), 0.0) / pops[k] if cases.shape[1] else 0.0
        pd = max(float(np.max(deaths[k])), 0.0) / pops[k] if deaths.shape[1] else 0.0
        out.append(BivariatePoint(str(f), float(cov[k]), pc, pd))
    return out


def dataset_bivariate(dataset, factor):
    j = dataset.factors.index(factor)
    return max_bivariate(dataset.daily[..., 0], dataset.daily[..., 1], dataset.covariates_raw[:, j],
                         dataset.populations, dataset.city_ids)


@dataclass(frozen=True)
class PeriodSpec:
    """Inclusive date ranges for the Past, Now and Future periods."""

    past: tuple
    now: tuple
    future: tuple

    @classmethod
    def from_last_date(cls, first, last, window=14):
        day = dt.timedelta(days=1)
        now_start = last - (window - 1) * day
        past = (first, now_start - day)
        if past[1] < past[0]:
            raise ValueError("the Past period has zero days")
        return cls(past, (now_start, last), (last + day, last + window * day))

    @classmethod
    def for_dataset(cls, dataset, window=14):
        return cls.from_last_date(dataset.dates[0], dataset.dates[-1], window)

    def indices(self, first):
        """Day-index ranges ``(start, stop)`` relative to ``first`` (stop exclusive)."""
        out = {}
        for name in ("past", "now", "future"):
            a, b = getattr(self, name)
            start, stop = (a - first).days, (b - first).days + 1
            if stop <= start:
                raise ValueError(f"the {name.title()} period has zero days")
            out[name] = (start, stop)
        return out


def _fitted_daily(model, dataset):
    """One-step-ahead model values for each observed day (observed where no full window exists)."""
    L = model.config.input_len
    cols = dataset.factor_columns(model.factors)
    n = dataset.n_days
    fitted = dataset.daily.copy()
    if n <= L:
        return fitted
    feats = step_features(dataset.values, dataset.covariates[:, cols], model.config.fusion_mode)
    win = np.arange(n - L)[:, None] + np.arange(L)[None, :]
    X = feats[:, win].reshape(-1, L, feats.shape[-1])
    y = model.net.forward(X, record=False)[:, :2].reshape(dataset.n_cities, n - L, 2)
    for ch in (0, 1):
        fitted[:, L:, ch] = np.maximum(dataset.value_scalers[ch].invert(y[..., ch]), 0.0)
    return fitted


def period_city_vectors(dataset, periods=None, model=None, use_fitted=False):
    """Per-city mean of sqrt(daily) / sqrt(population) over each period.

    Returns ``{period: (cities, 2) array}``. Past and Now use observed values
    (model one-step fits with ``use_fitted``); Future uses the model's
    forecast from the last observed window.
    """
    periods = periods or PeriodSpec.for_dataset(dataset)
    idx = periods.indices(dataset.dates[0])
    n = dataset.n_days
    daily = _fitted_daily(model, dataset) if (use_fitted and model is not None) else dataset.daily
    norm = np.sqrt(dataset.populations)[:, None]
    out = {}
    for name in ("past", "now"):
        a, b = idx[name]
        if a < 0 or b > n:
            raise ValueError(f"the {name.title()} period lies outside the observed dates")
        out[name] = np.sqrt(daily[:, a:b]).mean(axis=1) / norm
    a, b = idx["future"]
    if model is None:
        out["future"] = np.full((dataset.n_cities, 2), np.nan)
    else:
        if a < n:
            raise ValueError("the Future period overlaps observed dates")
        horizon = np.stack([predict_city(model, dataset, k).reshape(-1, 2) for k in range(dataset.n_cities)])
        if b - n > horizon.shape[1]:
            raise ValueError("the Future period is longer than the model horizon")
        out["future"] = np.sqrt(horizon[:, a - n:b - n]).mean(axis=1) / norm
    return out


@dataclass(frozen=True)
class PeriodCorrelation:
    factors: tuple
    values: np.ndarray  # (factors, 6) in PERIOD_COLUMNS order

    def row(self, factor):
        return dict(zip(PERIOD_COLUMNS, self.values[self.factors.index(factor)]))


def period_correlation(model, dataset, periods=None, covariates=None, use_fitted=False,
                       method="pearson"):
    """Correlate per-city period rates with raw covariate values.

    ``covariates`` is a list of dataset factor names (default: all) or a
    mapping ``{name: per-city values}``.
    """
    vecs = period_city_vectors(dataset, periods, model, use_fitted)
    if covariates is None:
        covariates = dataset.factors
    if isinstance(covariates, dict):
        named = {k: np.asarray(v, dtype=float) for k, v in covariates.items()}
    else:
        named = {f: dataset.covariates_raw[:, dataset.factors.index(f)] for f in covariates}
    rows = []
    for name, cov in named.items():
        row = []
        for ch in (0, 1):
            for period in ("past", "now", "future"):
                y = vecs[period][:, ch]
                row.append(correlate(cov, y, method) if np.all(np.isfinite(y)) else np.nan)
        rows.append(row)
    return PeriodCorrelation(tuple(named), np.array(rows, dtype=float).reshape(len(named), 6))


# ------------------------------------------------------------------ CSV

def _fmt(x):
    return repr(float(x)) if np.isfinite(x) else UNDEFINED


def write_correlation_csv(matrix, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(matrix.factors)
        for row in matrix.values:
            w.writerow([_fmt(x) for x in row])


def read_correlation_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    names = tuple(rows[0])
    values = np.array([[np.nan if c == UNDEFINED else float(c) for c in r] for r in rows[1:]])
    return CorrelationMatrix(names, values, np.isfinite(values))


def write_period_csv(table, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("factor",) + PERIOD_COLUMNS)
        for name, row in zip(table.factors, table.values):
            w.writerow([name] + [_fmt(x) for x in row])


def write_bivariate_csv(points, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("fips", "covariate", "peak_cases_pc", "peak_deaths_pc"))
        for p in points:
            w.writerow([p.fips, repr(p.covariate), repr(p.peak_cases_pc), repr(p.peak_deaths_pc)])


def write_pairplot_csv(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("fips", "factor_x", "factor_y", "x", "y"))
        for f, a, b, x, y in rows:
            w.writerow([f, a, b, repr(x), repr(y)])


def as_table(dataset):
    """Raw (aggregated, unnormalized) covariates of a dataset as a :class:`CovariateTable`."""
    ids = tuple(c if len(c) == 5 and c.isdigit() else f"{k:05d}" for k, c in enumerate(dataset.city_ids))
    return CovariateTable(ids, dataset.factors, dataset.covariates_raw)
