"""Command-line interface.

Commands: ingest, train, predict, sweep, rank, analyze, report.

Configuration is an INI-style file (``[section]`` headers, ``key = value``
lines). Every key can be overridden on the command line with ``--key value``
(or ``--section.key value`` when a key name is ambiguous).

Exit codes: 0 ok, 2 input/schema error, 3 validation failure, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import __version__
from .analysis import (
    PeriodSpec, as_table, correlation_views, dataset_bivariate, pairplot_data, period_correlation,
    write_bivariate_csv, write_correlation_csv, write_pairplot_csv, write_period_csv,
)
from .data import (
    Dataset, SchemaError, ValidationError, build_dataset, read_covariates, read_metros,
    read_timeseries, window_samples,
)
from .model import (
    ModelConfig, NotFittedError, TrainingDivergedError, build_model, evaluate, load_model,
    predict_city, save_model, train,
)
from .registry import NONE_FACTOR, FactorRegistry, RegistryError
from .sweep import (
    KEYS, SweepError, SweepSpec, boxplot_stats, rank_factors, read_results_csv, run_sweep,
    topk_curve, write_boxplot_csv, write_rank_csv, write_results_csv,
)

log = logging.getLogger("covforecast")

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "data": {
        "timeseries": "timeseries.csv",
        "covariates": "covariates.csv",
        "metro": "metro.csv",
        "registry": "",
        "factors": "",
        "policy": "reject",
        "min_cases": "0",
        "dataset": "",
    },
    "model": {f.name: str(f.default) for f in fields(ModelConfig)} | {"factors": "", "path": ""},
    "sweep": {
        "factors": "",
        "input_lens": "3,4,5",
        "repetitions": "10",
        "base_seed": "0",
        "key": "cum_error_cases",
    },
    "analysis": {
        "factors": "",
        "method": "pearson",
        "use_fitted": "false",
        "window": "14",
    },
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def load_config(path, overrides):
    cfg = configparser.ConfigParser(interpolation=None)
    cfg.optionxform = str
    cfg.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}", EXIT_INPUT)
        cfg.read(path, encoding="utf-8")
    for key, value in overrides:
        if "." in key:
            section, name = key.split(".", 1)
            if not cfg.has_section(section):
                cfg.add_section(section)
            cfg[section][name] = value
            continue
        hits = [s for s in cfg.sections() if key in cfg[s]]
        if not hits:
            raise CliError(f"unknown option --{key}", EXIT_INPUT)
        if len(hits) > 1:
            raise CliError(f"--{key} is ambiguous; use one of "
                           + ", ".join(f"--{s}.{key}" for s in hits), EXIT_INPUT)
        cfg[hits[0]][key] = value
    return cfg


def config_snapshot(cfg):
    return {s: dict(cfg[s]) for s in cfg.sections()}


def model_config(cfg, n_covariates=0, seed=None):
    sec = cfg["model"]
    kw = {}
    for f in fields(ModelConfig):
        raw = sec.get(f.name)
        if f.type in ("int", int):
            kw[f.name] = int(raw)
        elif f.type in ("float", float):
            kw[f.name] = float(raw)
        else:
            kw[f.name] = raw
    kw["n_covariates"] = n_covariates
    if seed is not None:
        kw["seed"] = seed
    try:
        return ModelConfig(**kw)
    except ValueError as exc:
        raise CliError(f"invalid model configuration: {exc}", EXIT_INPUT) from exc


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg, inputs, outputs, started):
    """Record version, config, input/output digests and timestamps; written last, atomically."""
    manifest = {
        "tool": "covforecast",
        "version": __version__,
        "command": command,
        "config": config_snapshot(cfg),
        "inputs": {os.path.relpath(p, out_dir): file_digest(p) for p in inputs},
        "outputs": {os.path.relpath(p, out_dir): file_digest(p) for p in outputs},
        "started": started,
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, path)
    return path


def _require(path, what):
    if not path or not os.path.exists(path):
        raise CliError(f"{what} not found: {path}", EXIT_INPUT)
    return path


def _dataset_path(args, cfg):
    return cfg["data"]["dataset"] or os.path.join(args.out, "dataset.json")


def _load_dataset(args, cfg):
    path = _require(_dataset_path(args, cfg), "dataset (run 'ingest' first)")
    return Dataset.load(path), path


def _model_path(args, cfg):
    return cfg["model"]["path"] or os.path.join(args.out, "model.covf")


# ------------------------------------------------------------------ commands

def cmd_ingest(args, cfg):
    d = cfg["data"]
    ts = _require(d["timeseries"], "time-series file")
    cv = _require(d["covariates"], "covariate file")
    mt = _require(d["metro"], "metro file")
    inputs = [ts, cv, mt]
    if d["registry"]:
        inputs.append(_require(d["registry"], "factor registry"))
        registry = FactorRegistry.load(d["registry"])
    else:
        registry = FactorRegistry.default()
    factors = _split_list(d["factors"]) or None
    records = read_timeseries(ts)
    table, dropped = read_covariates(cv, factors)
    unknown = [f for f in table.factors if f not in registry]
    if unknown:
        raise CliError(f"unclassified covariate column(s): {', '.join(unknown)}", EXIT_INPUT)
    metros = read_metros(mt)
    dataset, report = build_dataset(records, table, metros, registry, d["policy"], int(d["min_cases"]))
    ds_path = os.path.join(args.out, "dataset.json")
    dataset.save(ds_path)
    rep_path = os.path.join(args.out, "validation_report.json")
    with open(rep_path, "w", encoding="utf-8") as fh:
        json.dump({
            "kept": report.kept,
            "rejected": [{"city": c, "reason": r} for c, r in report.rejected],
            "covariate_rows_dropped": dropped,
            "violations": [{"fips": v.fips, "date": v.date.isoformat(), "field": v.field,
                            "index": v.index} for v in report.violations],
        }, fh, indent=2, sort_keys=True)
    for c, r in report.rejected:
        log.warning("rejected %s: %s", c, r)
    log.info("dataset with %d cities and %d days", dataset.n_cities, dataset.n_days)
    return inputs, [ds_path, rep_path]


def _model_factors(cfg, dataset):
    names = _split_list(cfg["model"]["factors"])
    return [] if names in ([], [NONE_FACTOR]) else names


def cmd_train(args, cfg):
    dataset, ds_path = _load_dataset(args, cfg)
    factors = _model_factors(cfg, dataset)
    mc = model_config(cfg, len(factors))
    try:
        samples = window_samples(dataset, mc.input_len, factors, mc.fusion_mode)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_INPUT) from exc
    model = build_model(mc)
    report = train(model, samples, mc)
    model_path = _model_path(args, cfg)
    save_model(model, model_path)
    loss_path = os.path.join(args.out, "train_report.csv")
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_loss"))
        for e, tl in enumerate(report.train_loss):
            vl = report.val_loss[e] if e < len(report.val_loss) else ""
            w.writerow([e + 1, repr(tl), repr(vl) if vl != "" else ""])
    eval_path = os.path.join(args.out, "eval.json")
    with open(eval_path, "w", encoding="utf-8") as fh:
        json.dump({
            "all": asdict(evaluate(model, samples)),
            "validation": asdict(evaluate(model, samples, report.val_indices)),
            "snapshot_id": report.snapshot_id,
        }, fh, indent=2, sort_keys=True)
    return [ds_path], [model_path, loss_path, eval_path]


def cmd_predict(args, cfg):
    dataset, ds_path = _load_dataset(args, cfg)
    model_path = _require(_model_path(args, cfg), "model checkpoint (run 'train' first)")
    model = load_model(model_path)
    out_path = os.path.join(args.out, "forecast.csv")
    last = dataset.dates[-1]
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("city", "date", "day", "cases", "deaths"))
        for k, city in enumerate(dataset.city_ids):
            y = predict_city(model, dataset, k).reshape(-1, 2)
            for day, (c, d) in enumerate(y, start=1):
                date = (last + dt.timedelta(days=day)).isoformat()
                w.writerow([city, date, day, repr(float(c)), repr(float(d))])
    return [ds_path, model_path], [out_path]


def sweep_spec(cfg, dataset):
    s = cfg["sweep"]
    factors = _split_list(s["factors"]) or [f for f in dataset.factors]
    return SweepSpec(tuple(f for f in factors if f != NONE_FACTOR),
                     tuple(int(x) for x in _split_list(s["input_lens"])),
                     int(s["repetitions"]), int(s["base_seed"]), cfg["model"]["fusion_mode"])


def _unchanged(args, cfg, command, inputs):
    path = os.path.join(args.out, f"manifest_{command}.json")
    if not os.path.exists(path):
        return False
    with open(path, encoding="utf-8") as fh:
        old = json.load(fh)
    now = {os.path.relpath(p, args.out): file_digest(p) for p in inputs}
    outputs_ok = all(os.path.exists(os.path.join(args.out, p)) for p in old.get("outputs", {}))
    return old.get("inputs") == now and old.get("config") == config_snapshot(cfg) and outputs_ok


def cmd_sweep(args, cfg):
    dataset, ds_path = _load_dataset(args, cfg)
    watched = ([args.config] if args.config else []) + [ds_path]
    if args.if_changed and _unchanged(args, cfg, "sweep", watched):
        log.info("inputs and configuration unchanged; sweep skipped")
        return None
    spec = sweep_spec(cfg, dataset)
    template = model_config(cfg)
    run_dir = os.path.join(args.out, "runs")
    marker = os.path.join(args.out, "SWEEP_INCOMPLETE")
    with open(marker, "w", encoding="utf-8") as fh:
        fh.write("partial results are in runs/; rerun the same command to resume\n")
    try:
        results = run_sweep(spec, dataset, template, args.parallel, run_dir)
    except KeyError as exc:
        raise CliError(str(exc.args[0]), EXIT_INPUT) from exc
    out_path = os.path.join(args.out, "sweep_results.csv")
    write_results_csv(results, out_path)
    os.remove(marker)
    failed = [r for r in results if not r.ok]
    if failed:
        log.warning("%d of %d runs failed and are excluded from statistics", len(failed), len(results))
    return [ds_path], [out_path]


def cmd_rank(args, cfg):
    src = _require(os.path.join(args.out, "sweep_results.csv"), "sweep results (run 'sweep' first)")
    results = read_results_csv(src)
    key = cfg["sweep"]["key"]
    if key not in KEYS:
        raise CliError(f"unknown ranking key {key!r}", EXIT_INPUT)
    outputs = []
    rank_path = os.path.join(args.out, "rank_table.csv")
    write_rank_csv(rank_factors(results, key), rank_path)
    outputs.append(rank_path)
    for metric in ("cum_error_cases", "cum_error_death"):
        p = os.path.join(args.out, f"boxplot_{metric}.csv")
        write_boxplot_csv(boxplot_stats(results, metric), p)
        outputs.append(p)
    for k in (1, 5, 10):
        p = os.path.join(args.out, f"topk_{k}.csv")
        curve = topk_curve(results, k, key)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"rank,{key}\n")
            fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(curve.tolist()))
        outputs.append(p)
    return [src], outputs


def cmd_analyze(args, cfg):
    dataset, ds_path = _load_dataset(args, cfg)
    a = cfg["analysis"]
    factors = _split_list(a["factors"]) or list(dataset.factors)
    missing = [f for f in factors if f not in dataset.factors]
    if missing:
        raise CliError(f"factors not in dataset: {', '.join(missing)}", EXIT_INPUT)
    table = as_table(dataset).select(factors)
    outputs = []
    views = correlation_views(table, a["method"])
    for name, matrix in views.items():
        p = os.path.join(args.out, "correlation_matrix.csv" if name == "full"
                         else f"correlation_matrix_{name}.csv")
        write_correlation_csv(matrix, p)
        outputs.append(p)
    p = os.path.join(args.out, "pairplot.csv")
    write_pairplot_csv(pairplot_data(table), p)
    outputs.append(p)
    for f in factors:
        p = os.path.join(args.out, f"bivariate_{f}.csv")
        write_bivariate_csv(dataset_bivariate(dataset, f), p)
        outputs.append(p)
    inputs = [ds_path]
    model_path = _model_path(args, cfg)
    model = None
    if os.path.exists(model_path):
        model = load_model(model_path)
        inputs.append(model_path)
    else:
        log.warning("no model at %s; the Future columns will be undefined", model_path)
    try:
        periods = PeriodSpec.for_dataset(dataset, int(a["window"]))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    table_pc = period_correlation(model, dataset, periods, factors,
                                  a["use_fitted"].lower() in ("1", "true", "yes"), a["method"])
    p = os.path.join(args.out, "period_correlation.csv")
    write_period_csv(table_pc, p)
    outputs.append(p)
    return inputs, outputs


def _read_csv_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def _num(x):
    try:
        v = float(x)
    except (TypeError, ValueError):
        return x
    return v if np.isfinite(v) else None


def cmd_report(args, cfg):
    inputs, summary = [], {"version": __version__}
    rank_path = os.path.join(args.out, "rank_table.csv")
    if os.path.exists(rank_path):
        inputs.append(rank_path)
        summary["ranking"] = [{k: (_num(v) if k not in ("risk",) else v) for k, v in row.items()}
                              for row in _read_csv_rows(rank_path)]
    cm_path = os.path.join(args.out, "correlation_matrix.csv")
    if os.path.exists(cm_path):
        inputs.append(cm_path)
        with open(cm_path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        summary["covariate_correlation"] = {
            "factors": rows[0], "values": [[_num(c) for c in r] for r in rows[1:]]}
    pc_path = os.path.join(args.out, "period_correlation.csv")
    if os.path.exists(pc_path):
        inputs.append(pc_path)
        summary["period_correlation"] = [{k: (_num(v) if k != "factor" else v) for k, v in row.items()}
                                         for row in _read_csv_rows(pc_path)]
    if not inputs:
        raise CliError("nothing to report; run 'rank' and/or 'analyze' first", EXIT_INPUT)
    out_path = os.path.join(args.out, "report.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return inputs, [out_path]


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
    "rank": cmd_rank,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="covforecast", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI-style configuration file")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="model seed (train) or base seed (sweep)")
    p.add_argument("--parallel", type=int, default=1, help="concurrent sweep runs")
    p.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    p.add_argument("--if-changed", action="store_true",
                   help="sweep: skip when inputs and configuration match the last manifest")
    return p


def _pairs(extra):
    if len(extra) % 2:
        raise CliError(f"option without a value: {extra[-1]}", EXIT_INPUT)
    out = []
    for k, v in zip(extra[::2], extra[1::2]):
        if not k.startswith("--"):
            raise CliError(f"unexpected argument {k!r}", EXIT_INPUT)
        out.append((k[2:].replace("-", "_") if "." not in k else k[2:], v))
    return out


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    try:
        cfg = load_config(args.config, _pairs(extra))
        if args.seed is not None:
            cfg["model"]["seed"] = str(args.seed)
            cfg["sweep"]["base_seed"] = str(args.seed)
        if args.parallel < 1:
            raise CliError("--parallel must be >= 1", EXIT_INPUT)
        os.makedirs(args.out, exist_ok=True)
        result = COMMANDS[args.command](args, cfg)
        if result is not None:
            inputs, outputs = result
            if args.config:
                inputs = [args.config] + list(inputs)
            write_manifest(args.out, args.command, cfg, inputs, outputs, started)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (SchemaError, RegistryError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (ValidationError, NotFittedError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (TrainingDivergedError, SweepError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
