"""Risk-factor sweep: one model per (factor, input length, repetition),
then rankings, box-whisker statistics and top-k error curves.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .data import window_samples
from .model import ModelConfig, build_model, evaluate, train
from .registry import NONE_FACTOR, SWEEP_FACTORS

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("factor", "input_len", "repetition", "seed", "rmse_cases", "rmse_death",
                  "cum_error_cases", "cum_error_death", "wall_ms")
RANK_COLUMNS = ("rmse_cases", "rmse_death", "cum_error_cases", "cum_error_death", "days_in",
                "risk", "place")
KEYS = ("cum_error_cases", "cum_error_death", "rmse_cases", "rmse_death")


class SweepError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    factors: tuple = SWEEP_FACTORS
    input_lens: tuple = (3, 4, 5)
    repetitions: int = 10
    base_seed: int = 0
    fusion_mode: str = "a"

    def __post_init__(self):
        factors = tuple(self.factors)
        if NONE_FACTOR not in factors:
            factors = (NONE_FACTOR,) + factors
        if len(set(factors)) != len(factors):
            raise ValueError("sweep factors must be unique")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "input_lens", tuple(int(L) for L in self.input_lens))

    def grid(self):
        return [(f, L, r) for f in self.factors for L in self.input_lens
                for r in range(self.repetitions)]


def run_seed(base_seed, factor, input_len, repetition):
    """Stable 64-bit seed for one grid point, independent of execution order."""
    key = f"{int(base_seed)}\x1f{factor}\x1f{int(input_len)}\x1f{int(repetition)}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SweepResult:
    factor: str
    input_len: int
    repetition: int
    seed: int
    rmse_cases: float
    rmse_death: float
    cum_error_cases: float
    cum_error_death: float
    wall_ms: float = 0.0
    error: str = ""

    @property
    def ok(self):
        return not self.error

    @property
    def coord(self):
        return (self.factor, self.input_len, self.repetition)


def run_one(dataset, factor, input_len, repetition, seed, template, mode="a"):
    """Train and evaluate one grid point; failures are returned, not raised."""
    t0 = time.perf_counter()
    try:
        covs = () if factor == NONE_FACTOR else (factor,)
        samples = window_samples(dataset, input_len, covs, mode)
        cfg = replace(template, input_len=input_len, n_covariates=len(covs), seed=seed, fusion_mode=mode)
        model = build_model(cfg)
        train(model, samples, cfg)
        ev = evaluate(model, samples)
    except (FloatingPointError, ValueError) as exc:
        log.warning("run %s/L%d/rep%d failed: %s", factor, input_len, repetition, exc)
        nan = math.nan
        return SweepResult(factor, input_len, repetition, seed, nan, nan, nan, nan,
                           (time.perf_counter() - t0) * 1e3, f"{type(exc).__name__}: {exc}")
    return SweepResult(factor, input_len, repetition, seed, ev.rmse_cases, ev.rmse_deaths,
                       ev.cum_error_cases, ev.cum_error_deaths, (time.perf_counter() - t0) * 1e3)


def _run_point(args):
    return run_one(*args)


def _run_file(run_dir, coord):
    factor, L, rep = coord
    return os.path.join(run_dir, f"{factor}__L{L}__r{rep}.json")


def _write_run(run_dir, result):
    path = _run_file(run_dir, result.coord)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(asdict(result), fh, sort_keys=True)
    os.replace(tmp, path)


def _read_run(path):
    with open(path, encoding="utf-8") as fh:
        return SweepResult(**json.load(fh))


def run_sweep(spec, dataset, model_config=None, parallel=1, run_dir=None):
    """Run every grid point of ``spec`` on ``dataset``.

    Seeds come from :func:`run_seed`, so results do not depend on order or
    on ``parallel``. With ``run_dir`` each finished run is stored as its own
    file and existing files are reused, which makes an interrupted sweep
    resumable. Results are returned in grid order.
    """
    template = model_config or ModelConfig()
    missing = [f for f in spec.factors if f != NONE_FACTOR and f not in dataset.factors]
    if missing:
        raise KeyError(f"factors missing from the dataset: {', '.join(missing)}")
    points = spec.grid()
    done = {}
    if run_dir:
        os.makedirs(run_dir, exist_ok=True)
        for coord in points:
            path = _run_file(run_dir, coord)
            if os.path.exists(path):
                done[coord] = _read_run(path)
    todo = [c for c in points if c not in done]
    jobs = [(dataset, f, L, r, run_seed(spec.base_seed, f, L, r), template, spec.fusion_mode)
            for f, L, r in todo]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=int(parallel)) as pool:
            for res in pool.map(_run_point, jobs):
                done[res.coord] = res
                if run_dir:
                    _write_run(run_dir, res)
    else:
        for job in jobs:
            res = _run_point(job)
            done[res.coord] = res
            if run_dir:
                _write_run(run_dir, res)
    results = [done[c] for c in points]
    for factor in spec.factors:
        if not any(r.ok for r in results if r.factor == factor):
            raise SweepError(f"every run failed for factor {factor!r}")
    return results


@dataclass(frozen=True)
class RankRow:
    rmse_cases: float
    rmse_death: float
    cum_error_cases: float
    cum_error_death: float
    days_in: int
    risk: str
    place: int


def _by_factor(results):
    groups = {}
    for r in results:
        if r.ok:
            groups.setdefault(r.factor, []).append(r)
    return groups


def rank_factors(results, key="cum_error_cases"):
    """Best run per factor by ``key``, sorted ascending (ties by factor name)."""
    if key not in KEYS:
        raise ValueError(f"unknown ranking key {key!r}")
    best = []
    for factor, runs in _by_factor(results).items():
        best.append(min(runs, key=lambda r: getattr(r, key)))
    best.sort(key=lambda r: (getattr(r, key), r.factor))
    return [RankRow(r.rmse_cases, r.rmse_death, r.cum_error_cases, r.cum_error_death,
                    r.input_len, r.factor, place) for place, r in enumerate(best)]


@dataclass(frozen=True)
class BoxStats:
    factor: str
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n: int


def five_number(values):
    v = np.asarray(values, dtype=float)
    q = np.percentile(v, [0, 25, 50, 75, 100])  # linear interpolation
    return tuple(float(x) for x in q)


def boxplot_stats(results, key="cum_error_cases"):
    """Five-number summary of ``key`` per factor, ordered by each factor's minimum."""
    out = []
    for factor, runs in _by_factor(results).items():
        out.append(BoxStats(factor, *five_number([getattr(r, key) for r in runs]), len(runs)))
    out.sort(key=lambda b: (b.min, b.factor))
    return out


def topk_curve(results, k=1, key="cum_error_cases"):
    """Pool the ``k`` best runs of every factor and sort the errors ascending."""
    pooled = []
    for runs in _by_factor(results).values():
        vals = sorted(getattr(r, key) for r in runs)
        pooled.extend(vals[:k])
    return np.sort(np.asarray(pooled, dtype=float))


# ------------------------------------------------------------------ CSV

def write_results_csv(results, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.factor, r.input_len, r.repetition, r.seed, repr(r.rmse_cases),
                        repr(r.rmse_death), repr(r.cum_error_cases), repr(r.cum_error_death),
                        f"{r.wall_ms:.0f}"])


def read_results_csv(path):
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {f.name: row.get(f.name, "") for f in fields(SweepResult)}
            metrics = [float(vals[c]) for c in RESULT_COLUMNS[4:8]]
            out.append(SweepResult(vals["factor"], int(vals["input_len"]), int(vals["repetition"]),
                                   int(vals["seed"]), *metrics, float(vals["wall_ms"] or 0.0),
                                   "" if all(np.isfinite(metrics)) else "failed"))
    return out


def write_rank_csv(table, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RANK_COLUMNS)
        for r in table:
            w.writerow([repr(r.rmse_cases), repr(r.rmse_death), repr(r.cum_error_cases),
                        repr(r.cum_error_death), r.days_in, r.risk, r.place])


def write_boxplot_csv(stats, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("factor", "min", "q1", "median", "q3", "max", "n"))
        for b in stats:
            w.writerow([b.factor, repr(b.min), repr(b.q1), repr(b.median), repr(b.q3), repr(b.max), b.n])
