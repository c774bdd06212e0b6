"""AUC, the plasticity and nested-CV experiments, and report aggregation.

Scores are inlier scores (higher = more normal); AUC treats anomalies as the
positive class, ranking them by outlierness ``-score``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import protocols, svdd
from ._rng import derive_seed, rng_for
from .data import Dataset, make_partition, stratified_kfold
from .errors import (
    ConfigurationError,
    ExperimentError,
    IncompleteContrastError,
    InvalidInputError,
    SvfedError,
    UndefinedAucError,
)
from .protocols import FederationConfig, SveParams, SyntheticSamplerParams
from .svdd import SolverSettings, SvddHyperparams

ALGORITHMS = ("ocsvm", "svdd", "esvdd", "sve")
FEDERATED = ("esvdd", "sve")
CENTRAL_SCHEME = "none"
AXES = ("split_bias", "client_fraction", "anonymisation")

REPORT_COLUMNS = ("dataset", "algorithm", "k", "f", "scheme", "anonymise", "auc_mean", "auc_std", "n_runs")


@dataclass(frozen=True)
class AucResult:
    auc: float
    n_positive: int
    n_negative: int


def _anomaly_mask(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype == bool:
        return labels
    if labels.dtype.kind in "iu":
        return labels.astype(bool)
    lut = {"anomaly": True, "o": True, "normal": False, "n": False}
    try:
        return np.array([lut[str(v).lower()] for v in labels], dtype=bool)
    except KeyError as exc:
        raise InvalidInputError(f"unknown label {exc.args[0]!r}") from None


def auc(scores, labels) -> AucResult:
    """Mann-Whitney AUC: P(anomaly scores below a normal point), ties counting one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    pos = _anomaly_mask(labels).ravel()
    if s.shape != pos.shape:
        raise InvalidInputError(f"{len(s)} scores but {len(pos)} labels")
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC is undefined unless both classes are present")
    # rank by outlierness; midranks are multiples of 1/2, so 2*U is an exact integer
    ranks2 = (2 * rankdata(-s, method="average")).astype(np.int64)
    u2 = int(ranks2[pos].sum()) - n_pos * (n_pos + 1)
    return AucResult(u2 / (2 * n_pos * n_neg), n_pos, n_neg)


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    k: int = 1
    f: float = 1.0
    scheme: str = CENTRAL_SCHEME
    anonymise: bool = False
    hyper_samples: int = 10
    c_range: tuple = (0.2, 0.8)
    gamma: float = 1.0
    seeds: tuple = (0,)
    sve: SveParams = SveParams()
    sampler: SyntheticSamplerParams = SyntheticSamplerParams()
    solver: SolverSettings = SolverSettings()
    train_pool: str = "all"
    strict_clients: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        lo, hi = self.c_range
        if not (0 < lo <= hi <= 1):
            raise ConfigurationError(f"c_range must lie inside (0, 1], got {self.c_range}")
        if self.algorithm == "ocsvm" and hi >= 1:
            raise ConfigurationError("for ocsvm the sampled value is nu and must stay below 1")
        if self.hyper_samples < 1:
            raise ConfigurationError("hyper_samples must be >= 1")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if self.train_pool not in ("all", "normal"):
            raise ConfigurationError(f"train_pool must be 'all' or 'normal', got {self.train_pool!r}")
        svdd.KernelParams(self.gamma)
        if self.algorithm in FEDERATED:
            FederationConfig(self.k, self.f, 0, self.scheme)
        elif (self.k, self.f, self.scheme, self.anonymise) != (1, 1.0, CENTRAL_SCHEME, False):
            # centralized baselines ignore the federation axes
            object.__setattr__(self, "k", 1)
            object.__setattr__(self, "f", 1.0)
            object.__setattr__(self, "scheme", CENTRAL_SCHEME)
            object.__setattr__(self, "anonymise", False)

    @property
    def federated(self) -> bool:
        return self.algorithm in FEDERATED

    def cell(self, dataset: str) -> tuple:
        return (dataset, self.algorithm, self.k, self.f, self.scheme, self.anonymise)


@dataclass(frozen=True)
class ExperimentRow:
    dataset: str
    algorithm: str
    k: int
    f: float
    scheme: str
    anonymise: bool
    auc_mean: float
    auc_std: float
    n_runs: int

    @property
    def config_key(self) -> tuple:
        return (self.k, self.f, self.scheme, self.anonymise)


@dataclass
class RunDetail:
    """One AUC measurement; ``pair`` identifies it across contrast arms."""

    cell: tuple
    pair: tuple
    hyper: float
    auc: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"cell": list(self.cell), "pair": list(self.pair), "hyper": self.hyper,
                "auc": self.auc, "extra": self.extra}


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    details: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def extend(self, other: "ExperimentReport") -> None:
        self.rows.extend(other.rows)
        self.details.extend(other.details)
        self.failures.extend(other.failures)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.dataset, r.algorithm, r.k, repr(r.f), r.scheme, int(r.anonymise),
                        repr(r.auc_mean), repr(r.auc_std), r.n_runs])
        return buf.getvalue()

    @staticmethod
    def rows_from_csv(text: str) -> list:
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise InvalidInputError(f"unexpected report columns {reader.fieldnames}")
        return [
            ExperimentRow(d["dataset"], d["algorithm"], int(d["k"]), float(d["f"]), d["scheme"],
                          bool(int(d["anonymise"])), float(d["auc_mean"]), float(d["auc_std"]),
                          int(d["n_runs"]))
            for d in reader
        ]

    def to_json(self) -> str:
        doc = {
            "rows": [asdict(r) for r in self.rows],
            "runs": [d.to_dict() for d in self.details],
            "failures": self.failures,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def hyper_values(cfg: ExperimentConfig, dataset: str, seed: int, n: Optional[int] = None,
                 tag: str = "plasticity") -> np.ndarray:
    """The sampled C (or nu, for ocsvm) values; shared by every configuration of a dataset."""
    lo, hi = cfg.c_range
    return rng_for(seed, dataset, tag, "hyper").uniform(lo, hi, n or cfg.hyper_samples)


def _pool_indices(data: Dataset, idx, cfg: ExperimentConfig) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.intp)
    if cfg.train_pool == "normal":
        idx = idx[~data.is_anomaly[idx]]
    if len(idx) == 0:
        raise ConfigurationError("empty training pool")
    return idx


def fit_scorer(cfg: ExperimentConfig, X: np.ndarray, value: float, run_seed: int):
    """Train ``cfg.algorithm`` on ``X``; returns ``(object with .score, protocol record or None)``.

    ``value`` is nu for ocsvm and C otherwise.
    """
    if cfg.algorithm == "ocsvm":
        return svdd.train_ocsvm_baseline(X, value, cfg.gamma, cfg.solver), None
    hp = SvddHyperparams(float(value), cfg.gamma)
    if cfg.algorithm == "svdd":
        return svdd.train_svdd(X, hp, cfg.solver), None
    part = make_partition(cfg.scheme, X, cfg.k, derive_seed(run_seed, "partition", cfg.scheme))
    clients = [X[a] for a in part.assignments]
    fed = FederationConfig(cfg.k, cfg.f, run_seed, cfg.scheme)
    if cfg.algorithm == "esvdd":
        result = protocols.run_esvdd(clients, hp, fed, cfg.sampler, cfg.anonymise, cfg.solver,
                                    strict=cfg.strict_clients)
    else:
        result = protocols.run_sve(clients, hp, fed, cfg.sve, cfg.anonymise, cfg.solver,
                                  strict=cfg.strict_clients)
    return result, result.record


def _summarise(cfg: ExperimentConfig, dataset: str, aucs) -> ExperimentRow:
    a = np.asarray(aucs, dtype=np.float64)
    return ExperimentRow(dataset, cfg.algorithm, cfg.k, cfg.f, cfg.scheme, cfg.anonymise,
                         float(a.mean()), float(a.std()), len(a))


def run_plasticity_experiment(data: Dataset, cfg: ExperimentConfig) -> ExperimentReport:
    """Train on the whole dataset (or its normal points) and score the whole dataset.

    One run per (seed, hyperparameter sample); the row holds mean and
    population std of their AUCs.
    """
    report = ExperimentReport()
    pool = _pool_indices(data, np.arange(data.n), cfg)
    X = data.features[pool]
    aucs = []
    for seed in cfg.seeds:
        for i, value in enumerate(hyper_values(cfg, data.name, seed)):
            run_seed = derive_seed(seed, data.name, cfg.k, i)
            try:
                scorer, record = fit_scorer(cfg, X, value, run_seed)
                res = auc(scorer.score(data.features), data.is_anomaly)
            except SvfedError as exc:
                raise ExperimentError(
                    f"{data.name}/{cfg.algorithm} k={cfg.k} f={cfg.f} {cfg.scheme} "
                    f"anonymise={cfg.anonymise} seed={seed} sample={i} value={value:.4f}", exc
                ) from exc
            aucs.append(res.auc)
            extra = {}
            if record is not None:
                extra = record.to_dict(with_timings=False)
            report.details.append(RunDetail(cfg.cell(data.name), (seed, i), float(value), res.auc, extra))
    report.rows.append(_summarise(cfg, data.name, aucs))
    return report


@dataclass(frozen=True)
class NestedFold:
    train: np.ndarray
    test: np.ndarray
    inner: tuple  # ((train, validation), ...) in global indices


def nested_cv_splits(data: Dataset, outer_folds: int, inner_folds: int, seed: int) -> list:
    outer = stratified_kfold(data, outer_folds, derive_seed(seed, data.name, "outer"))
    folds = []
    for o, (tr, te) in enumerate(outer):
        inner = stratified_kfold(data.is_anomaly[tr], inner_folds, derive_seed(seed, data.name, "inner", o))
        folds.append(NestedFold(tr, te, tuple((tr[a], tr[b]) for a, b in inner)))
    return folds


def select_hyper(candidates, mean_aucs) -> float:
    """Highest mean validation AUC; ties go to the smaller value."""
    best = None
    for value, m in sorted(zip(candidates, mean_aucs)):
        if best is None or m > best[1]:
            best = (value, m)
    return float(best[0])


def run_generalization_experiment(data: Dataset, cfg: ExperimentConfig, outer_folds: int = 3,
                                  inner_folds: int = 3, search_samples: int = 10) -> ExperimentReport:
    """Nested CV: inner folds pick C by randomized search, outer folds measure test AUC."""
    report = ExperimentReport()
    aucs = []
    for seed in cfg.seeds:
        for o, fold in enumerate(nested_cv_splits(data, outer_folds, inner_folds, seed)):
            candidates = hyper_values(cfg, data.name, seed, search_samples, tag=f"cv-outer-{o}")
            ctx = f"{data.name}/{cfg.algorithm} k={cfg.k} f={cfg.f} {cfg.scheme} anonymise={cfg.anonymise} seed={seed} outer={o}"
            try:
                means = []
                for c_i, value in enumerate(candidates):
                    vals = []
                    for i_i, (itr, iva) in enumerate(fold.inner):
                        pool = _pool_indices(data, itr, cfg)
                        run_seed = derive_seed(seed, data.name, cfg.k, "cv", o, i_i, c_i)
                        scorer, _ = fit_scorer(cfg, data.features[pool], value, run_seed)
                        vals.append(auc(scorer.score(data.features[iva]), data.is_anomaly[iva]).auc)
                    means.append(float(np.mean(vals)))
                chosen = select_hyper(candidates, means)
                pool = _pool_indices(data, fold.train, cfg)
                run_seed = derive_seed(seed, data.name, cfg.k, "cv", o, "final")
                scorer, record = fit_scorer(cfg, data.features[pool], chosen, run_seed)
                res = auc(scorer.score(data.features[fold.test]), data.is_anomaly[fold.test])
            except SvfedError as exc:
                raise ExperimentError(ctx, exc) from exc
            aucs.append(res.auc)
            extra = {"inner_mean_auc": means, "candidates": [float(c) for c in candidates]}
            if record is not None:
                extra["record"] = record.to_dict(with_timings=False)
            report.details.append(RunDetail(cfg.cell(data.name), (seed, o), chosen, res.auc, extra))
    report.rows.append(_summarise(cfg, data.name, aucs))
    return report


@dataclass(frozen=True)
class DiffRow:
    dataset: str
    algorithm: str
    axis: str
    k: int
    f: Optional[float]
    scheme: Optional[str]
    anonymise: Optional[bool]
    mean_diff: float
    std_diff: float
    n_pairs: int


DIFF_COLUMNS = ("dataset", "algorithm", "K", "F", "scheme", "anonymise", "mean_diff", "std_diff", "n_pairs")

# axis -> (cell field index being contrasted, first arm, second arm)
_CONTRAST = {
    "split_bias": (4, "iid", "biased"),
    "client_fraction": (3, 1.0, 0.5),
    "anonymisation": (5, False, True),
}


def aggregate_differences(report: ExperimentReport, axis: str, strict: bool = True) -> list:
    """Paired AUC differences (first arm minus second) per cell of the other axes.

    Positive values favour iid over biased, F=1 over F=0.5, raw over
    anonymised.  With ``strict`` a cell with only one arm raises
    :class:`IncompleteContrastError`; otherwise it is skipped.
    """
    if axis not in _CONTRAST:
        raise InvalidInputError(f"unknown axis {axis!r}; choose from {AXES}")
    pos, first, second = _CONTRAST[axis]
    arms: dict = {}
    for d in report.details:
        cell = tuple(d.cell)
        if cell[1] not in FEDERATED or cell[pos] not in (first, second):
            continue
        key = cell[:pos] + (None,) + cell[pos + 1:]
        arms.setdefault(key, {first: {}, second: {}})[cell[pos]][tuple(d.pair)] = d.auc
    out, missing = [], []
    for key in sorted(arms, key=lambda t: tuple("" if v is None else str(v) for v in t)):
        a, b = arms[key][first], arms[key][second]
        common = sorted(set(a) & set(b))
        if not common:
            missing.append(key)
            continue
        diffs = np.array([a[p] - b[p] for p in common])
        ds, alg, k, f, scheme, anon = key
        out.append(DiffRow(ds, alg, axis, k, f, scheme, anon,
                           float(diffs.mean()), float(diffs.std()), len(diffs)))
    if missing and strict:
        raise IncompleteContrastError(missing)
    return out


def diff_rows_csv(rows: Sequence[DiffRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIFF_COLUMNS)
    fmt = lambda v: "" if v is None else (int(v) if isinstance(v, bool) else v)  # noqa: E731
    for r in rows:
        w.writerow([r.dataset, r.algorithm, r.k, fmt(r.f), fmt(r.scheme), fmt(r.anonymise),
                    repr(r.mean_diff), repr(r.std_diff), r.n_pairs])
    return buf.getvalue()


@dataclass(frozen=True)
class SummaryRow:
    dataset: str
    algorithm: str
    tag: str  # "+" best, "-" worst
    row: ExperimentRow


def _config_order(r: ExperimentRow) -> tuple:
    return (r.k, r.f, r.scheme, r.anonymise)


def best_worst_summary(report) -> list:
    """Best (+) and worst (-) configuration per dataset and algorithm.

    Ties on mean AUC go to the lower std, then to the first configuration in
    (k, f, scheme, anonymise) order.
    """
    rows = report.rows if isinstance(report, ExperimentReport) else list(report)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.dataset, r.algorithm), []).append(r)
    out = []
    for (ds, alg), rs in sorted(groups.items()):
        best = min(rs, key=lambda r: (-r.auc_mean, r.auc_std, _config_order(r)))
        worst = min(rs, key=lambda r: (r.auc_mean, r.auc_std, _config_order(r)))
        out.append(SummaryRow(ds, alg, "+", best))
        out.append(SummaryRow(ds, alg, "-", worst))
    return out


def format_summary_table(report) -> str:
    """Table with one line per dataset: OC-SVM, SVDD, SVE(+), ESVDD(+), SVE(-), ESVDD(-)."""
    summary = best_worst_summary(report)
    cells = {(s.dataset, s.algorithm, s.tag): s.row for s in summary}
    datasets = sorted({s.dataset for s in summary})
    cols = [("OC-SVM", "ocsvm", "+"), ("SVDD", "svdd", "+"), ("SVE (+)", "sve", "+"),
            ("ESVDD (+)", "esvdd", "+"), ("SVE (-)", "sve", "-"), ("ESVDD (-)", "esvdd", "-")]
    width = max([len(d) for d in datasets] + [7])
    lines = ["dataset".ljust(width) + "".join(f" | {name:>15}" for name, _, _ in cols)]
    lines.append("-" * len(lines[0]))
    for ds in datasets:
        parts = []
        for _, alg, tag in cols:
            r = cells.get((ds, alg, tag))
            text = "-" if r is None else f"{r.auc_mean:.2f} ± {r.auc_std:.0E}"
            parts.append(f" | {text:>15}")
        lines.append(ds.ljust(width) + "".join(parts))
    return "\n".join(lines) + "\n"
