"""Ingestion, validation, aggregation, normalization and windowing of
county-level case/death series and covariates.
"""
from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .registry import FactorRegistry

log = logging.getLogger(__name__)

HORIZON_DAYS = 15  # next day plus 14 further days
N_TARGETS = 2 * HORIZON_DAYS

TIMESERIES_COLUMNS = ("fips", "date", "cases_cum", "deaths_cum")
METRO_COLUMNS = ("metro_id", "name", "fips", "population")


class SchemaError(ValueError):
    """Input file does not have the expected columns or cell formats."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ValidationError(ValueError):
    pass


class DegenerateFeatureError(ValidationError):
    pass


def check_fips(fips):
    fips = str(fips).strip()
    if len(fips) != 5 or not fips.isdigit():
        raise SchemaError(f"FIPS code must have exactly 5 digits, got {fips!r}", "fips")
    return fips


@dataclass(frozen=True)
class TimeSeriesRecord:
    fips: str
    date: dt.date
    cases_cum: int
    deaths_cum: int

    def __post_init__(self):
        object.__setattr__(self, "fips", check_fips(self.fips))
        if isinstance(self.date, str):
            object.__setattr__(self, "date", dt.date.fromisoformat(self.date))
        if self.cases_cum < 0 or self.deaths_cum < 0:
            raise ValidationError(f"negative cumulative count for {self.fips} on {self.date}")


@dataclass(frozen=True)
class Violation:
    fips: str
    date: dt.date
    field: str
    index: int


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    @property
    def bad_fips(self):
        return sorted({v.fips for v in self.violations})


def _group_by_fips(records):
    groups = OrderedDict()
    for r in records:
        groups.setdefault(r.fips, []).append(r)
    return groups


def validate_monotonic(records):
    """Flag every (fips, date) at which a cumulative count decreases.

    Records must be sorted by date within each fips. ``Violation.index`` is
    the position within that fips' series.
    """
    report = ValidationReport()
    for fips, series in _group_by_fips(records).items():
        for k in range(1, len(series)):
            if series[k].date <= series[k - 1].date:
                raise ValidationError(f"records for {fips} are not sorted by date at {series[k].date}")
        for name in ("cases_cum", "deaths_cum"):
            for k in range(1, len(series)):
                if getattr(series[k], name) < getattr(series[k - 1], name):
                    report.violations.append(Violation(fips, series[k].date, name, k))
    return report


def repair_monotonic(values):
    """Clamp a cumulative series so that it never decreases."""
    return np.maximum.accumulate(np.asarray(values))


def cumulative_to_daily(cum):
    """First differences of a cumulative series, keeping the first value."""
    cum = np.asarray(cum)
    if cum.ndim != 1:
        raise ValueError("expected a one-dimensional series")
    daily = np.diff(cum, prepend=0) if cum.size else cum.copy()
    if cum.size and (cum[0] < 0 or np.any(daily[1:] < 0)):
        bad = int(np.argmax(daily[1:] < 0)) + 1 if np.any(daily[1:] < 0) else 0
        raise ValidationError(f"cumulative series decreases at index {bad}")
    return daily


@dataclass(frozen=True)
class CovariateTable:
    """Rows of covariate values keyed by fips, columns keyed by factor name."""

    fips: tuple
    factors: tuple
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(len(self.fips), len(self.factors))
        if np.isnan(values).any():
            raise ValidationError("covariate table contains NaN values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "fips", tuple(check_fips(f) for f in self.fips))
        object.__setattr__(self, "factors", tuple(self.factors))

    @classmethod
    def from_dict(cls, rows):
        """Build from ``{fips: {factor: value}}``; every row must carry the same factors."""
        fips = tuple(rows)
        factors = tuple(next(iter(rows.values()))) if rows else ()
        values = [[rows[f][name] for name in factors] for f in fips]
        return cls(fips, factors, np.array(values, dtype=float).reshape(len(fips), len(factors)))

    def row(self, fips):
        return dict(zip(self.factors, self.values[self._index(fips)]))

    def column(self, name):
        return self.values[:, self.factors.index(name)]

    def _index(self, fips):
        try:
            return self.fips.index(fips)
        except ValueError:
            raise KeyError(fips) from None

    def select(self, factors):
        cols = [self.factors.index(f) for f in factors]
        return CovariateTable(self.fips, tuple(factors), self.values[:, cols])


@dataclass(frozen=True)
class MetroArea:
    metro_id: str
    name: str
    members: tuple
    populations: tuple

    def __post_init__(self):
        if not self.members:
            raise ValidationError(f"metro {self.metro_id} has no member counties")
        if len(self.members) != len(self.populations):
            raise ValidationError(f"metro {self.metro_id}: members and populations differ in length")
        if any(p <= 0 for p in self.populations):
            raise ValidationError(f"metro {self.metro_id}: populations must be positive")
        object.__setattr__(self, "members", tuple(check_fips(f) for f in self.members))
        object.__setattr__(self, "populations", tuple(float(p) for p in self.populations))

    @property
    def population(self):
        return float(sum(self.populations))


def weighted_median(values, weights):
    """Population-weighted median; averages the two middle values on an exact half split."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    cw = np.cumsum(w) / w.sum()
    k = int(np.searchsorted(cw, 0.5))
    if math.isclose(cw[k], 0.5, rel_tol=0.0, abs_tol=1e-12) and k + 1 < len(v):
        return 0.5 * (v[k] + v[k + 1])
    return float(v[k])


def aggregate_metro(metro, covariates, policy=None):
    """Combine member-county covariates into one metro-level vector.

    ``policy`` maps factor name to ``"mean"`` (population-weighted mean),
    ``"sum"`` or ``"median"`` (population-weighted median); a
    :class:`FactorRegistry` works too. Defaults to the shipped registry.
    """
    if policy is None:
        policy = FactorRegistry.default()
    missing = [f for f in metro.members if f not in covariates.fips]
    if missing:
        raise KeyError(f"metro {metro.metro_id}: no covariates for fips {', '.join(missing)}")
    rows = np.array([covariates.values[covariates.fips.index(f)] for f in metro.members])
    pops = np.asarray(metro.populations)
    weights = pops / pops.sum()
    out = {}
    for j, name in enumerate(covariates.factors):
        rule = policy.aggregate(name) if isinstance(policy, FactorRegistry) else policy.get(name, "mean")
        col = rows[:, j]
        if rule == "sum":
            out[name] = float(col.sum())
        elif rule == "median":
            out[name] = weighted_median(col, pops)
        elif rule == "mean":
            out[name] = float(weights @ col)
        else:
            raise ValueError(f"unknown aggregation {rule!r} for {name}")
    return out


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max scaler, optionally on a sqrt or log domain."""

    kind: str
    min: np.ndarray
    max: np.ndarray

    KINDS = ("sqrt_minmax", "minmax", "log_minmax")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scaler kind {self.kind!r}")
        lo = np.asarray(self.min, dtype=float)
        hi = np.asarray(self.max, dtype=float)
        if np.any(hi < lo):
            raise ValueError("scaler max must be >= min")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    def _forward_domain(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "sqrt_minmax":
            return np.sqrt(x)
        if self.kind == "log_minmax":
            return np.log(x)
        return x

    def _inverse_domain(self, u):
        if self.kind == "sqrt_minmax":
            return np.square(np.maximum(u, 0.0))
        if self.kind == "log_minmax":
            return np.exp(u)
        return u

    @property
    def _span(self):
        span = self.max - self.min
        # constant features map to 0 instead of dividing by zero
        return np.where(span > 0, span, 1.0)

    @classmethod
    def fit(cls, values, kind="minmax", axis=None):
        probe = cls(kind, 0.0, 0.0)
        u = probe._forward_domain(values)
        return cls(kind, np.min(u, axis=axis), np.max(u, axis=axis))

    def transform(self, x):
        return (self._forward_domain(x) - self.min) / self._span

    def invert(self, y):
        return self._inverse_domain(np.asarray(y, dtype=float) * self._span + self.min)

    def to_dict(self):
        return {"kind": self.kind, "min": np.asarray(self.min).tolist(),
                "max": np.asarray(self.max).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_value_scaler(values, feature="cases"):
    """sqrt min-max scaler fitted jointly over all cities' daily values."""
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError(f"{feature}: daily values must be non-negative")
    scaler = Scaler.fit(values.ravel(), "sqrt_minmax")
    if scaler.max <= scaler.min:
        raise DegenerateFeatureError(f"{feature}: all values are equal, cannot rescale")
    return scaler


def normalize_covariates(table, populations, registry=None):
    """Map every covariate into [0, 1] according to its registry class.

    Extensive factors are divided by population first, the population factor
    is log-transformed, intensive factors are only min-max rescaled. Returns
    the normalized ``(cities, k)`` matrix and a ``{factor: Scaler}`` dict
    (extensive scalers act on the per-capita value).
    """
    registry = registry or FactorRegistry.default()
    pops = np.asarray(populations, dtype=float)
    out = np.empty_like(table.values)
    scalers = {}
    for j, name in enumerate(table.factors):
        kind = registry.kind(name)
        col = table.values[:, j]
        if kind == "extensive":
            col = col / pops
            scaler = Scaler.fit(col, "minmax")
        elif kind == "population":
            if np.any(col <= 0):
                raise ValidationError(f"{name}: population values must be positive for the log transform")
            scaler = Scaler.fit(col, "log_minmax")
        else:
            scaler = Scaler.fit(col, "minmax")
        out[:, j] = scaler.transform(col)
        scalers[name] = scaler
    return out, scalers


@dataclass
class Dataset:
    """Aligned per-city daily series and covariates, plus the fitted scalers.

    ``daily`` holds raw daily counts and ``values`` their normalized form,
    both shaped ``(cities, days, 2)`` with cases in channel 0 and deaths in
    channel 1.
    """

    city_ids: tuple
    names: tuple
    members: tuple
    populations: np.ndarray
    dates: tuple
    daily: np.ndarray
    values: np.ndarray
    factors: tuple
    covariates_raw: np.ndarray
    covariates: np.ndarray
    value_scalers: tuple
    covariate_scalers: dict

    @property
    def n_cities(self):
        return len(self.city_ids)

    @property
    def n_days(self):
        return len(self.dates)

    def factor_columns(self, names):
        missing = [n for n in names if n not in self.factors]
        if missing:
            raise KeyError(f"covariates not in dataset: {', '.join(missing)}")
        return [self.factors.index(n) for n in names]

    def to_json(self):
        doc = {
            "format": "covforecast-dataset/1",
            "city_ids": list(self.city_ids),
            "names": list(self.names),
            "members": [list(m) for m in self.members],
            "populations": self.populations.tolist(),
            "dates": [d.isoformat() for d in self.dates],
            "daily": self.daily.tolist(),
            "values": self.values.tolist(),
            "factors": list(self.factors),
            "covariates_raw": self.covariates_raw.tolist(),
            "covariates": self.covariates.tolist(),
            "value_scalers": [s.to_dict() for s in self.value_scalers],
            "covariate_scalers": {k: v.to_dict() for k, v in self.covariate_scalers.items()},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        k = len(d["factors"])
        n = len(d["city_ids"])
        return cls(
            city_ids=tuple(d["city_ids"]),
            names=tuple(d["names"]),
            members=tuple(tuple(m) for m in d["members"]),
            populations=np.asarray(d["populations"], dtype=float),
            dates=tuple(dt.date.fromisoformat(s) for s in d["dates"]),
            daily=np.asarray(d["daily"], dtype=float).reshape(n, -1, 2),
            values=np.asarray(d["values"], dtype=float).reshape(n, -1, 2),
            factors=tuple(d["factors"]),
            covariates_raw=np.asarray(d["covariates_raw"], dtype=float).reshape(n, k),
            covariates=np.asarray(d["covariates"], dtype=float).reshape(n, k),
            value_scalers=tuple(Scaler.from_dict(s) for s in d["value_scalers"]),
            covariate_scalers={key: Scaler.from_dict(s) for key, s in d["covariate_scalers"].items()},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def dataset_from_daily(daily, covariates=None, factors=(), populations=None, city_ids=None,
                       start=dt.date(2020, 2, 1), registry=None):
    """Build a :class:`Dataset` straight from a ``(cities, days, 2)`` array of daily counts.

    Convenient for synthetic experiments; ``covariates`` is a raw
    ``(cities, k)`` matrix normalized with ``registry`` classes.
    """
    daily = np.asarray(daily, dtype=float)
    n_cities, n_days, _ = daily.shape
    city_ids = tuple(city_ids or (f"{k + 1:05d}" for k in range(n_cities)))
    pops = np.full(n_cities, 1e5) if populations is None else np.asarray(populations, dtype=float)
    factors = tuple(factors)
    raw = np.zeros((n_cities, 0)) if covariates is None else np.asarray(covariates, dtype=float)
    raw = raw.reshape(n_cities, len(factors))
    if factors:
        registry = registry or FactorRegistry.default()
        # unknown names in synthetic data are treated as intensive
        known = FactorRegistry([registry[f] if f in registry else _intensive(f) for f in factors])
        cov, cov_scalers = normalize_covariates(CovariateTable(city_ids, factors, raw), pops, known)
    else:
        cov, cov_scalers = np.zeros((n_cities, 0)), {}
    scalers = (fit_value_scaler(daily[..., 0], "cases"), fit_value_scaler(daily[..., 1], "deaths"))
    values = np.stack([scalers[0].transform(daily[..., 0]), scalers[1].transform(daily[..., 1])], axis=-1)
    return Dataset(
        city_ids=city_ids, names=city_ids, members=tuple((c,) for c in city_ids),
        populations=pops, dates=tuple(start + dt.timedelta(days=d) for d in range(n_days)),
        daily=daily, values=values, factors=factors, covariates_raw=raw, covariates=cov,
        value_scalers=scalers, covariate_scalers=cov_scalers,
    )


def _intensive(name):
    from .registry import FactorInfo
    return FactorInfo(name, "intensive", "mean")


@dataclass
class IngestReport:
    kept: list = field(default_factory=list)
    rejected: list = field(default_factory=list)  # (metro_id, reason)
    violations: list = field(default_factory=list)


def build_dataset(records, covariates, metros, registry=None, policy="reject", min_cases=0):
    """Validate, aggregate and normalize raw inputs into a :class:`Dataset`.

    Each metro's series is the sum of its member counties' series present in
    ``records``. The date axis runs from the earliest to the latest record;
    days before a county's first record count as zero, any other gap rejects
    the city. ``policy`` is ``"reject"`` (drop cities with decreasing
    cumulative counts) or ``"repair"`` (clamp to the running maximum).
    """
    if policy not in ("reject", "repair"):
        raise ValueError(f"unknown monotonicity policy {policy!r}")
    registry = registry or FactorRegistry.default()
    for name in covariates.factors:
        registry[name]  # noqa: B018 - raises on unclassified factors
    records = sorted(records, key=lambda r: (r.fips, r.date))
    report = IngestReport()
    validation = validate_monotonic(records)
    report.violations = validation.violations
    bad = set(validation.bad_fips)
    by_fips = _group_by_fips(records)
    if not by_fips:
        raise ValidationError("no time-series records")
    first = min(r.date for r in records)
    last = max(r.date for r in records)
    n_days = (last - first).days + 1
    dates = tuple(first + dt.timedelta(days=d) for d in range(n_days))

    kept, series, cov_rows = [], [], []
    for metro in metros:
        present = [f for f in metro.members if f in by_fips]
        if not present:
            report.rejected.append((metro.metro_id, "no time series for any member fips"))
            continue
        if policy == "reject" and bad.intersection(present):
            culprit = sorted(bad.intersection(present))
            report.rejected.append((metro.metro_id, f"decreasing cumulative counts in {', '.join(culprit)}"))
            continue
        try:
            cov = aggregate_metro(metro, covariates, registry)
        except KeyError as exc:
            report.rejected.append((metro.metro_id, str(exc.args[0])))
            continue
        cum = np.zeros((n_days, 2))
        gap = None
        for f in present:
            s = by_fips[f]
            offset = (s[0].date - first).days
            days = [(r.date - first).days for r in s]
            if days != list(range(offset, offset + len(s))) or offset + len(s) != n_days:
                gap = f
                break
            arr = np.array([[r.cases_cum, r.deaths_cum] for r in s], dtype=float)
            if policy == "repair":
                arr = np.maximum.accumulate(arr, axis=0)
            cum[offset:] += arr
        if gap is not None:
            report.rejected.append((metro.metro_id, f"missing dates in series for {gap}"))
            continue
        if cum[-1, 0] <= min_cases and min_cases > 0:
            report.rejected.append((metro.metro_id, f"at most {min_cases} cumulative cases"))
            continue
        kept.append(metro)
        series.append(np.stack([cumulative_to_daily(cum[:, 0]), cumulative_to_daily(cum[:, 1])], axis=-1))
        cov_rows.append([cov[f] for f in covariates.factors])
    if not kept:
        raise ValidationError("every city was rejected")
    report.kept = [m.metro_id for m in kept]

    daily = np.stack(series)
    pops = np.array([m.population for m in kept])
    raw = np.array(cov_rows, dtype=float).reshape(len(kept), len(covariates.factors))
    ids = tuple(m.metro_id for m in kept)
    if covariates.factors:
        cov, cov_scalers = normalize_covariates(CovariateTable(
            tuple(f"{k:05d}" for k in range(len(kept))), covariates.factors, raw), pops, registry)
    else:
        cov, cov_scalers = np.zeros((len(kept), 0)), {}
    scalers = (fit_value_scaler(daily[..., 0], "cases"), fit_value_scaler(daily[..., 1], "deaths"))
    values = np.stack([scalers[0].transform(daily[..., 0]), scalers[1].transform(daily[..., 1])], axis=-1)
    ds = Dataset(
        city_ids=ids, names=tuple(m.name for m in kept), members=tuple(m.members for m in kept),
        populations=pops, dates=dates, daily=daily, values=values, factors=covariates.factors,
        covariates_raw=raw, covariates=cov, value_scalers=scalers, covariate_scalers=cov_scalers,
    )
    return ds, report


@dataclass
class WindowedSamples:
    """Model-ready sliding windows.

    ``inputs`` is ``(samples, L, 2 + k)``; ``targets`` and ``mask`` are
    ``(samples, 30)`` ordered ``[cases_t+1, deaths_t+1, ..., cases_t+15,
    deaths_t+15]``. Masked target slots hold 0.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray
    city: np.ndarray
    start: np.ndarray
    input_len: int
    factors: tuple = ()
    mode: str = "a"
    value_scalers: tuple = ()

    def __len__(self):
        return len(self.inputs)

    @property
    def n_features(self):
        return self.inputs.shape[-1]

    def subset(self, idx):
        idx = np.asarray(idx)
        return WindowedSamples(self.inputs[idx], self.targets[idx], self.mask[idx], self.city[idx],
                               self.start[idx], self.input_len, self.factors, self.mode,
                               self.value_scalers)


def step_features(values, covariates, mode="a"):
    """Per-step feature rows ``[cases, deaths, covariates...]`` for one or more days.

    ``values`` is ``(..., days, 2)``, ``covariates`` is ``(..., k)``. Mode
    ``"a"`` repeats the covariates at each step, mode ``"b"`` multiplies them
    by the mean of that day's cases and deaths.
    """
    values = np.asarray(values, dtype=float)
    cov = np.asarray(covariates, dtype=float)[..., None, :]
    cov = np.broadcast_to(cov, values.shape[:-1] + (cov.shape[-1],))
    if mode == "b":
        cov = cov * values.mean(axis=-1, keepdims=True)
    elif mode != "a":
        raise ValueError(f"unknown fusion mode {mode!r}")
    return np.concatenate([values, cov], axis=-1)


def window_samples(dataset, input_len, covariates=(), mode="a"):
    """Slide an ``input_len``-day window over every city.

    A window starting at day ``i`` is kept while day ``i + L`` (the next
    day) is observed; later target days beyond the data end are masked.
    """
    L = int(input_len)
    if L < 1:
        raise ValueError("input_len must be >= 1")
    covariates = tuple(covariates or ())
    cols = dataset.factor_columns(covariates)
    n = dataset.n_days
    n_windows = n - L
    if n_windows < 1:
        log.warning("series of %d days is shorter than input_len + 1 = %d; skipping all %d cities",
                    n, L + 1, dataset.n_cities)
        k = len(cols)
        return WindowedSamples(np.zeros((0, L, 2 + k)), np.zeros((0, N_TARGETS)),
                               np.zeros((0, N_TARGETS), dtype=bool), np.zeros(0, dtype=int),
                               np.zeros(0, dtype=int), L, covariates, mode, dataset.value_scalers)
    feats = step_features(dataset.values, dataset.covariates[:, cols], mode)  # (C, n, F)
    starts = np.arange(n_windows)
    win = starts[:, None] + np.arange(L)[None, :]
    inputs = feats[:, win]  # (C, W, L, F)
    tday = starts[:, None] + L + np.arange(HORIZON_DAYS)[None, :]  # (W, 15)
    observed = tday < n
    padded = np.concatenate([dataset.values, np.zeros((dataset.n_cities, HORIZON_DAYS, 2))], axis=1)
    targets = padded[:, tday].reshape(dataset.n_cities, n_windows, N_TARGETS)
    mask = np.repeat(observed, 2, axis=1)
    C = dataset.n_cities
    return WindowedSamples(
        inputs=inputs.reshape(C * n_windows, L, -1),
        targets=np.where(mask, targets, 0.0).reshape(C * n_windows, N_TARGETS),
        mask=np.broadcast_to(mask, (C, n_windows, N_TARGETS)).reshape(C * n_windows, N_TARGETS).copy(),
        city=np.repeat(np.arange(C), n_windows),
        start=np.tile(starts, C),
        input_len=L,
        factors=covariates,
        mode=mode,
        value_scalers=dataset.value_scalers,
    )


# ---------------------------------------------------------------- CSV readers

def _open_csv(path, required):
    fh = open(path, encoding="utf-8", newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    for col in required:
        if col not in header:
            fh.close()
            raise SchemaError(f"{path}: missing column {col!r}", col)
    return fh, reader


def read_timeseries(path):
    fh, reader = _open_csv(path, TIMESERIES_COLUMNS)
    out = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(TimeSeriesRecord(
                    check_fips(row["fips"]), dt.date.fromisoformat(row["date"].strip()),
                    int(row["cases_cum"]), int(row["deaths_cum"])))
            except (ValueError, TypeError) as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def read_covariates(path, factors=None):
    """Read ``fips,<factors...>``; rows with an empty cell are dropped and returned."""
    fh, reader = _open_csv(path, ("fips",) + tuple(factors or ()))
    with fh:
        names = tuple(factors) if factors else tuple(c for c in reader.fieldnames if c != "fips")
        fips, rows, dropped = [], [], []
        for lineno, row in enumerate(reader, start=2):
            cells = [row.get(n) for n in names]
            if any(c is None or c.strip() == "" for c in cells):
                dropped.append(row.get("fips", ""))
                continue
            try:
                rows.append([float(c) for c in cells])
                fips.append(check_fips(row["fips"]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    table = CovariateTable(tuple(fips), names, np.array(rows, dtype=float).reshape(len(fips), len(names)))
    return table, dropped


def read_metros(path):
    fh, reader = _open_csv(path, METRO_COLUMNS)
    groups = OrderedDict()
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                pop = float(row["population"])
                f = check_fips(row["fips"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            entry = groups.setdefault(row["metro_id"].strip(), [row["name"].strip(), [], []])
            entry[1].append(f)
            entry[2].append(pop)
    return [MetroArea(mid, name, tuple(m), tuple(p)) for mid, (name, m, p) in groups.items()]
