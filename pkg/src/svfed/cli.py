"""``svfed`` command line: run experiment grids, inspect partitions, generate data.

Exit codes: 0 success, 1 some grid cells failed, 2 configuration error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import data as data_mod
from ._rng import derive_seed
from .errors import ConfigurationError, DatasetParseError, SvfedError
from .evaluation import (
    ALGORITHMS,
    AXES,
    FEDERATED,
    ExperimentConfig,
    ExperimentReport,
    aggregate_differences,
    diff_rows_csv,
    format_summary_table,
    run_generalization_experiment,
    run_plasticity_experiment,
)
from .protocols import SveParams, SyntheticSamplerParams
from .svdd import SolverSettings

log = logging.getLogger("svfed")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

_TOP_KEYS = {
    "experiment", "datasets", "normalize", "algorithms", "grid", "hyper", "sve", "sampler",
    "solver", "cv", "train_pool", "strict_clients", "seeds", "out", "workers", "data_dir",
}
_SECTION_KEYS = {
    "grid": {"k", "f", "scheme", "anonymise"},
    "hyper": {"c_range", "samples", "gamma"},
    "sve": {"sigma", "tau", "epsilon", "max_correction_iters"},
    "sampler": {"sv_component_stddev", "mixture_weight_fit", "target_size", "max_attempts"},
    "solver": {"kkt_tolerance", "max_iterations", "sparsity_threshold"},
    "cv": {"outer_folds", "inner_folds", "search_samples"},
}


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: Optional[str] = None
    synthetic: Optional[dict] = None
    benchmark: bool = False


@dataclass
class RunConfig:
    datasets: list
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    experiment: str = "plasticity"
    normalize: bool = True
    k: list = field(default_factory=lambda: [2, 5, 10])
    f: list = field(default_factory=lambda: [0.5, 1.0])
    scheme: list = field(default_factory=lambda: ["iid", "biased"])
    anonymise: list = field(default_factory=lambda: [False, True])
    c_range: tuple = (0.2, 0.8)
    samples: int = 10
    gamma: float = 1.0
    sve: SveParams = SveParams()
    sampler: SyntheticSamplerParams = SyntheticSamplerParams()
    solver: SolverSettings = SolverSettings()
    outer_folds: int = 3
    inner_folds: int = 3
    search_samples: int = 10
    train_pool: str = "all"
    strict_clients: bool = False
    seeds: list = field(default_factory=lambda: [0])
    out: str = "results"
    workers: int = 1
    data_dir: Optional[str] = None

    def cells(self) -> list:
        """Experiment configurations in a fixed order, centralized baselines first."""
        out = []
        for alg in self.algorithms:
            if alg in FEDERATED:
                combos = itertools.product(self.k, self.f, self.scheme, self.anonymise)
            else:
                combos = [(1, 1.0, "none", False)]
            for k, f, scheme, anon in combos:
                out.append(ExperimentConfig(
                    alg, k, f, scheme, anon, self.samples, tuple(self.c_range), self.gamma,
                    tuple(self.seeds), self.sve, self.sampler, self.solver, self.train_pool,
                    self.strict_clients,
                ))
        return out


def _err(key, msg):
    return ConfigurationError(f"{key}: {msg}")


def _typed(value, kind, key):
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "on", "yes", "1", "false", "off", "no", "0"):
                return value.lower() in ("true", "on", "yes", "1")
            raise ValueError
        if kind is int:
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError
            return int(float(value))
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            return float(value)  # YAML reads "1e-6" as a string
        if kind is str:
            if not isinstance(value, str):
                raise ValueError
            return value
    except (TypeError, ValueError):
        raise _err(key, f"expected {kind.__name__}, got {value!r}") from None
    raise AssertionError(kind)


def _typed_list(value, kind, key):
    if not isinstance(value, (list, tuple)):
        value = [value]
    if not value:
        raise _err(key, "must not be empty")
    return [_typed(v, kind, f"{key}[{i}]") for i, v in enumerate(value)]


def _optional(value, kind, key):
    return None if value is None else _typed(value, kind, key)


def _section(doc, name):
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise _err(name, "expected a mapping")
    unknown = set(sec) - _SECTION_KEYS[name]
    if unknown:
        raise _err(f"{name}.{sorted(unknown)[0]}", "unknown key")
    return sec


def _dataset_specs(entries, base: Path, data_dir) -> list:
    if not isinstance(entries, list) or not entries:
        raise _err("datasets", "need a non-empty list")
    specs = []
    for i, e in enumerate(entries):
        key = f"datasets[{i}]"
        if isinstance(e, str):
            e = {"name": e} if e in data_mod.BENCHMARK_FILES else {"path": e}
        if not isinstance(e, dict):
            raise _err(key, "expected a mapping or a string")
        unknown = set(e) - {"name", "path", "synthetic"}
        if unknown:
            raise _err(f"{key}.{sorted(unknown)[0]}", "unknown key")
        if "path" in e:
            path = Path(e["path"])
            if not path.is_absolute():
                path = base / path
            if not path.is_file():
                raise _err(f"{key}.path", f"dataset file not found: {path}")
            specs.append(DatasetSpec(e.get("name") or path.stem, path=str(path)))
        elif "synthetic" in e:
            syn = e["synthetic"] or {}
            needed = {"n_normal", "n_anomaly", "d", "seed"}
            if not isinstance(syn, dict) or needed - set(syn):
                raise _err(f"{key}.synthetic", f"needs keys {sorted(needed)}")
            syn = {k: _typed(v, int, f"{key}.synthetic.{k}") for k, v in syn.items() if k in needed}
            name = e.get("name") or f"synthetic-{syn['seed']}"
            specs.append(DatasetSpec(name, synthetic=syn))
        elif "name" in e:
            name = e["name"]
            if name not in data_mod.BENCHMARK_FILES:
                raise _err(f"{key}.name", f"unknown benchmark {name!r}")
            path = Path(data_dir or data_mod.data_dir()) / data_mod.BENCHMARK_FILES[name]
            if name != "breast-cancer" and not path.is_file():
                raise _err(f"{key}.name", f"dataset file not found: {path}")
            specs.append(DatasetSpec(name, path=str(path) if path.is_file() else None, benchmark=True))
        else:
            raise _err(key, "needs one of name, path, synthetic")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise _err("datasets", "dataset names must be unique")
    return specs


def parse_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Load a YAML run configuration, apply flag overrides and validate.

    Every default not given in the file is the standard plasticity setting
    (gamma=1, sigma=1, tau=1e-3, C in [0.2, 0.8], 10 samples).
    """
    doc = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        base = path.parent
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise _err(sorted(unknown)[0], "unknown key")

    grid = dict(_section(doc, "grid"))
    for axis in ("k", "f", "scheme", "anonymise"):
        if axis in overrides:
            grid[axis] = overrides[axis]
    hyper = _section(doc, "hyper")
    sve = _section(doc, "sve")
    sampler = _section(doc, "sampler")
    solver = _section(doc, "solver")
    cv = _section(doc, "cv")

    data_dir = overrides.get("data_dir", doc.get("data_dir"))
    datasets = overrides.get("datasets", doc.get("datasets"))
    if datasets is None:
        raise _err("datasets", "required")
    cfg = RunConfig(datasets=_dataset_specs(datasets, base if "datasets" not in overrides else Path.cwd(), data_dir))
    cfg.data_dir = data_dir
    cfg.experiment = _typed(overrides.get("experiment", doc.get("experiment", cfg.experiment)), str, "experiment")
    if cfg.experiment not in ("plasticity", "generalization"):
        raise _err("experiment", f"must be plasticity or generalization, got {cfg.experiment!r}")
    cfg.normalize = _typed(doc.get("normalize", True), bool, "normalize")
    cfg.algorithms = _typed_list(overrides.get("algorithms", doc.get("algorithms", cfg.algorithms)), str, "algorithms")
    for i, a in enumerate(cfg.algorithms):
        if a not in ALGORITHMS:
            raise _err(f"algorithms[{i}]", f"unknown algorithm {a!r}")

    if "k" in grid:
        cfg.k = _typed_list(grid["k"], int, "grid.k")
    if "f" in grid:
        cfg.f = _typed_list(grid["f"], float, "grid.f")
    if "scheme" in grid:
        cfg.scheme = _typed_list(grid["scheme"], str, "grid.scheme")
    if "anonymise" in grid:
        cfg.anonymise = _typed_list(grid["anonymise"], bool, "grid.anonymise")
    for i, k in enumerate(cfg.k):
        if k < 1:
            raise _err(f"grid.k[{i}]", "must be >= 1")
    for i, f in enumerate(cfg.f):
        if not (0 < f <= 1):
            raise _err(f"grid.f[{i}]", f"client fraction must lie in (0, 1], got {f}")
    for i, s in enumerate(cfg.scheme):
        if s not in ("iid", "biased"):
            raise _err(f"grid.scheme[{i}]", f"must be iid or biased, got {s!r}")

    if "c_range" in hyper:
        cr = _typed_list(hyper["c_range"], float, "hyper.c_range")
        if len(cr) != 2 or not (0 < cr[0] <= cr[1] <= 1):
            raise _err("hyper.c_range", f"need [lo, hi] with 0 < lo <= hi <= 1, got {cr}")
        cfg.c_range = (cr[0], cr[1])
    if "ocsvm" in cfg.algorithms and cfg.c_range[1] >= 1:
        raise _err("hyper.c_range", "upper end must stay below 1 when ocsvm (nu) is run")
    cfg.samples = _typed(overrides.get("samples", hyper.get("samples", cfg.samples)), int, "hyper.samples")
    if cfg.samples < 1:
        raise _err("hyper.samples", "must be >= 1")
    cfg.gamma = _typed(hyper.get("gamma", cfg.gamma), float, "hyper.gamma")
    if not cfg.gamma > 0:
        raise _err("hyper.gamma", "must be positive")

    try:
        cfg.sve = SveParams(
            sigma=_typed(sve.get("sigma", 1.0), float, "sve.sigma"),
            tau=_typed(sve.get("tau", 1e-3), float, "sve.tau"),
            epsilon_step=_typed(sve.get("epsilon", 0.1), float, "sve.epsilon"),
            max_correction_iters=_typed(sve.get("max_correction_iters", 500), int, "sve.max_correction_iters"),
        )
    except ConfigurationError as exc:
        raise _err("sve", exc) from None
    try:
        cfg.sampler = SyntheticSamplerParams(
            sv_component_stddev=_typed(sampler.get("sv_component_stddev", 0.05), float, "sampler.sv_component_stddev"),
            mixture_weight_fit=_typed(sampler.get("mixture_weight_fit", 0.5), float, "sampler.mixture_weight_fit"),
            target_size=_optional(sampler.get("target_size"), int, "sampler.target_size"),
            max_attempts=_optional(sampler.get("max_attempts"), int, "sampler.max_attempts"),
        )
    except ConfigurationError as exc:
        raise _err("sampler", exc) from None
    try:
        cfg.solver = SolverSettings(
            kkt_tolerance=_typed(solver.get("kkt_tolerance", 1e-6), float, "solver.kkt_tolerance"),
            max_iterations=_optional(solver.get("max_iterations"), int, "solver.max_iterations"),
            sparsity_threshold=_typed(solver.get("sparsity_threshold", 1e-8), float, "solver.sparsity_threshold"),
        )
    except ConfigurationError as exc:
        raise _err("solver", exc) from None
    cfg.outer_folds = _typed(cv.get("outer_folds", 3), int, "cv.outer_folds")
    cfg.inner_folds = _typed(cv.get("inner_folds", 3), int, "cv.inner_folds")
    cfg.search_samples = _typed(cv.get("search_samples", 10), int, "cv.search_samples")
    if cfg.outer_folds < 2 or cfg.inner_folds < 2 or cfg.search_samples < 1:
        raise _err("cv", "need outer_folds >= 2, inner_folds >= 2, search_samples >= 1")

    cfg.train_pool = _typed(doc.get("train_pool", "all"), str, "train_pool")
    if cfg.train_pool not in ("all", "normal"):
        raise _err("train_pool", f"must be all or normal, got {cfg.train_pool!r}")
    cfg.strict_clients = _typed(doc.get("strict_clients", False), bool, "strict_clients")
    if "seed" in overrides:
        cfg.seeds = [_typed(overrides["seed"], int, "--seed")]
    elif "seeds" in doc:
        cfg.seeds = _typed_list(doc["seeds"], int, "seeds")
    cfg.out = str(overrides.get("out", doc.get("out", cfg.out)))
    cfg.workers = _typed(overrides.get("workers", doc.get("workers", 1)), int, "workers")
    if cfg.workers < 1:
        raise _err("workers", "must be >= 1")
    return cfg


def load_spec(spec: DatasetSpec, normalize: bool = True) -> data_mod.Dataset:
    if spec.synthetic is not None:
        ds = data_mod.generate_synthetic_benchmark(**spec.synthetic)
        ds = data_mod.Dataset(ds.features, ds.is_anomaly, spec.name, meta=ds.meta)
    elif spec.path is not None:
        ds = data_mod.load_dataset(spec.path, name=spec.name)
    else:
        ds = data_mod.breast_cancer_dataset()
    if normalize:
        ds, _ = data_mod.minmax_normalize(ds)
    return ds


def _run_cell(args):
    experiment, ds, cfg, cv = args
    t0 = time.perf_counter()
    try:
        if experiment == "plasticity":
            rep = run_plasticity_experiment(ds, cfg)
        else:
            rep = run_generalization_experiment(ds, cfg, *cv)
    except SvfedError as exc:
        rep = ExperimentReport(failures=[{"cell": list(cfg.cell(ds.name)), "error": str(exc)}])
    return rep, time.perf_counter() - t0


def run_partition(ds: data_mod.Dataset, cfg: ExperimentConfig, seed: int, sample: int = 0):
    """The client partition used by plasticity run ``sample`` of ``cfg``, in dataset indices."""
    pool = np.arange(ds.n) if cfg.train_pool == "all" else np.flatnonzero(~ds.is_anomaly)
    run_seed = derive_seed(seed, ds.name, cfg.k, sample)
    part = data_mod.make_partition(cfg.scheme, ds.features[pool], cfg.k,
                                   derive_seed(run_seed, "partition", cfg.scheme))
    return data_mod.Partition([pool[a] for a in part.assignments], part.scheme, part.seed, part.centroids)


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    (out / "partitions").mkdir(parents=True, exist_ok=True)
    datasets = [load_spec(s, cfg.normalize) for s in cfg.datasets]
    cells = cfg.cells()
    jobs = [(cfg.experiment, ds, c, (cfg.outer_folds, cfg.inner_folds, cfg.search_samples))
            for ds in datasets for c in cells]
    log.info("running %d cells (%s) with %d worker(s)", len(jobs), cfg.experiment, cfg.workers)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = []
        for i, job in enumerate(jobs, 1):
            results.append(_run_cell(job))
            log.info("[%d/%d] %s %s", i, len(jobs), job[1].name, job[2].cell(job[1].name)[1:])
    report = ExperimentReport()
    timings = []
    for (_, ds, c, _), (rep, secs) in zip(jobs, results):
        report.extend(rep)
        timings.append({"cell": list(c.cell(ds.name)), "seconds": secs})
    for f in report.failures:
        log.error("cell %s failed: %s", f["cell"], f["error"])

    _write(out / "report.csv", report.to_csv())
    _write(out / "report_detail.json", report.to_json())
    for axis in AXES:
        rows = aggregate_differences(report, axis, strict=False)
        if rows:
            _write(out / f"diff_{axis}.csv", diff_rows_csv(rows))
    if cfg.experiment == "plasticity":
        fed = [c for c in cells if c.federated]
        for ds in datasets:
            seen = set()
            for c in fed:
                if (c.k, c.scheme) in seen:
                    continue
                seen.add((c.k, c.scheme))
                try:
                    part = run_partition(ds, c, cfg.seeds[0])
                except SvfedError:
                    continue
                part.to_json(out / "partitions" / f"{ds.name}_k{c.k}_{c.scheme}.json")
    # wall-clock numbers are the only non-reproducible output, so they live apart
    _write(out / "timings.json", json.dumps(timings, indent=1) + "\n")

    if report.rows:
        sys.stdout.write(format_summary_table(report))
    if report.failures:
        sys.stderr.write(json.dumps({"failed_cells": report.failures}, indent=1) + "\n")
        return EXIT_PARTIAL
    return EXIT_OK


def _resolve_dataset(arg: str, data_dir=None) -> DatasetSpec:
    specs = _dataset_specs([arg], Path.cwd(), data_dir)
    return specs[0]


def cmd_inspect_partition(dataset: str, k: int, scheme: str, seed: int, out=None,
                          train_pool: str = "all", normalize: bool = True, data_dir=None) -> int:
    ds = load_spec(_resolve_dataset(dataset, data_dir), normalize)
    pool = np.arange(ds.n) if train_pool == "all" else np.flatnonzero(~ds.is_anomaly)
    part = data_mod.make_partition(scheme, ds.features, k, seed, indices=pool if train_pool != "all" else None)
    print(f"dataset {ds.name}: n={ds.n}, d={ds.d}, scheme={scheme}, k={k}, seed={seed}")
    for i, a in enumerate(part.assignments):
        line = f"client {i}: {len(a)} points ({int(ds.is_anomaly[a].sum())} anomalies)"
        if part.centroids is not None:
            line += " centroid=" + np.array2string(part.centroids[i], precision=3, separator=",",
                                                   max_line_width=10_000)
        print(line)
    target = Path(out) if out else Path(f"partition_{ds.name}_k{k}_{scheme}_{seed}.json")
    if target.suffix != ".json":
        target.mkdir(parents=True, exist_ok=True)
        target = target / f"partition_{ds.name}_k{k}_{scheme}_{seed}.json"
    part.to_json(target)
    log.info("wrote %s", target)
    return EXIT_OK


def cmd_generate_data(source: str, out: str, n_normal=200, n_anomaly=20, d=2, seed=0) -> int:
    if source == "synthetic":
        ds = data_mod.generate_synthetic_benchmark(n_normal, n_anomaly, d, seed)
    elif source == "breast-cancer":
        ds = data_mod.breast_cancer_dataset()
    else:
        raise ConfigurationError(f"unknown source {source!r}")
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out)
    log.info("wrote %s (%d rows, %d anomalies)", out, ds.n, ds.n_anomaly)
    return EXIT_OK


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v.strip()]
    return parse


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svfed", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment grid and write reports")
    r.add_argument("--config", help="YAML run configuration")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="single global seed (replaces seeds)")
    r.add_argument("--workers", type=int)
    r.add_argument("--datasets", type=_csv_list(str), help="comma list of benchmark names or CSV paths")
    r.add_argument("--data-dir", help="directory holding the benchmark CSV files")
    r.add_argument("--algorithms", type=_csv_list(str))
    r.add_argument("--experiment", choices=["plasticity", "generalization"])
    r.add_argument("--samples", type=int, help="hyperparameter samples per cell")
    r.add_argument("--k", type=_csv_list(int), help="client counts, e.g. 2,5,10")
    r.add_argument("--f", type=_csv_list(float), help="client fractions, e.g. 0.5,1")
    r.add_argument("--scheme", type=_csv_list(str), help="iid,biased")
    r.add_argument("--anonymise", type=_csv_list(str), help="on,off")

    ip = sub.add_parser("inspect-partition", help="show how a dataset is split among clients")
    ip.add_argument("--dataset", required=True, help="benchmark name or CSV path")
    ip.add_argument("--k", type=int, required=True)
    ip.add_argument("--scheme", choices=["iid", "biased"], default="iid")
    ip.add_argument("--seed", type=int, default=0)
    ip.add_argument("--out", help="JSON file or directory for the partition dump")
    ip.add_argument("--train-pool", choices=["all", "normal"], default="all")
    ip.add_argument("--data-dir")

    g = sub.add_parser("generate-data", help="write a dataset CSV")
    g.add_argument("--source", choices=["synthetic", "breast-cancer"], default="synthetic")
    g.add_argument("--out", required=True)
    g.add_argument("--n-normal", type=int, default=200)
    g.add_argument("--n-anomaly", type=int, default=20)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            overrides = {
                "out": args.out, "seed": args.seed, "workers": args.workers,
                "datasets": args.datasets, "data_dir": args.data_dir, "algorithms": args.algorithms,
                "experiment": args.experiment, "samples": args.samples,
                "k": args.k, "f": args.f, "scheme": args.scheme, "anonymise": args.anonymise,
            }
            if args.config is None and args.datasets is None:
                raise ConfigurationError("run needs --config or --datasets")
            return cmd_run(parse_config(args.config, overrides))
        if args.command == "inspect-partition":
            return cmd_inspect_partition(args.dataset, args.k, args.scheme, args.seed, args.out,
                                         args.train_pool, data_dir=args.data_dir)
        return cmd_generate_data(args.source, args.out, args.n_normal, args.n_anomaly, args.d, args.seed)
    except (ConfigurationError, DatasetParseError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
