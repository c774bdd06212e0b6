"""Datasets, normalisation, client partitioning and cross-validation folds."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from ._rng import rng_for
from .errors import ConfigurationError, DatasetParseError, InvalidInputError

NORMAL = "normal"
ANOMALY = "anomaly"

_LABEL_TOKENS = {"normal": False, "n": False, "anomaly": True, "o": True}

# Published benchmark files (headerless CSV, label column "n"/"o").
BENCHMARK_FILES = {
    "breast-cancer": "breast-cancer-unsupervised-ad.csv",
    "pen-global": "pen-global-unsupervised-ad.csv",
    "letter": "letter-unsupervised-ad.csv",
    "satellite": "satellite-unsupervised-ad.csv",
}


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    is_anomaly: np.ndarray
    name: str = "dataset"
    feature_min: Optional[np.ndarray] = None
    feature_max: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.is_anomaly, dtype=bool)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"features must be an n x d matrix with n, d >= 1, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidInputError("labels must have one entry per row")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "is_anomaly", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def labels(self) -> list[str]:
        return [ANOMALY if a else NORMAL for a in self.is_anomaly]

    @property
    def n_anomaly(self) -> int:
        return int(self.is_anomaly.sum())

    @property
    def n_normal(self) -> int:
        return self.n - self.n_anomaly

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.features[idx], self.is_anomaly[idx], self.name,
                       self.feature_min, self.feature_max, self.meta)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            for row, a in zip(self.features, self.is_anomaly):
                w.writerow([repr(float(v)) for v in row] + [ANOMALY if a else NORMAL])


def _parse_label(token, path, row, col):
    try:
        return _LABEL_TOKENS[token.strip().lower()]
    except KeyError:
        raise DatasetParseError(f"unknown label token {token!r}", path, row, col) from None


def load_dataset(path, format: str = "csv_labeled", name: Optional[str] = None) -> Dataset:
    """Read ``d`` numeric columns followed by a label column.

    Labels are ``normal``/``anomaly`` (case-insensitive) or ``n``/``o``.  A
    first row with no numeric cell at all is treated as a header.
    """
    if format != "csv_labeled":
        raise InvalidInputError(f"unsupported dataset format {format!r}")
    path = Path(path)
    if not path.is_file():
        raise DatasetParseError("no such file", path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not any(_is_number(c) for c in rows[0]):
        rows = rows[1:]
        offset = 2
    else:
        offset = 1
    if not rows:
        raise DatasetParseError("file contains no data rows", path)
    width = len(rows[0])
    if width < 2:
        raise DatasetParseError("need at least one feature column and a label column", path, offset)
    feats = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=bool)
    for r, row in enumerate(rows):
        lineno = r + offset
        if len(row) != width:
            raise DatasetParseError(f"expected {width} columns, found {len(row)}", path, lineno)
        for c, cell in enumerate(row[:-1]):
            try:
                feats[r, c] = float(cell)
            except ValueError:
                raise DatasetParseError(f"non-numeric feature {cell!r}", path, lineno, c + 1) from None
        if not np.all(np.isfinite(feats[r])):
            raise DatasetParseError("non-finite feature value", path, lineno)
        labels[r] = _parse_label(row[-1], path, lineno, width)
    return Dataset(feats, labels, name or path.stem)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def minmax_normalize(train: Dataset, others: Sequence[Dataset] = ()):
    """Rescale every dataset with the per-feature range of ``train``.

    Constant features map to 0; values of ``others`` may leave [0, 1].
    """
    lo = train.features.min(axis=0)
    hi = train.features.max(axis=0)
    span = hi - lo
    const = span == 0
    span = np.where(const, 1.0, span)

    def rescale(ds: Dataset) -> Dataset:
        if ds.d != train.d:
            raise InvalidInputError(f"dimension mismatch: {ds.d} vs {train.d}")
        Z = (ds.features - lo) / span
        Z[:, const] = 0.0
        return Dataset(Z, ds.is_anomaly, ds.name, lo, hi, ds.meta)

    return rescale(train), [rescale(o) for o in others]


@dataclass(frozen=True, eq=False)
class Partition:
    assignments: list
    scheme: str
    seed: int
    centroids: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return len(self.assignments)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": int(self.seed),
            "assignments": [[int(i) for i in a] for a in self.assignments],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def _pool(n_or_indices) -> np.ndarray:
    if np.ndim(n_or_indices) == 0:
        return np.arange(int(n_or_indices))
    return np.asarray(n_or_indices, dtype=np.intp)


def iid_partition(n, k: int, seed: int) -> Partition:
    """Shuffle ``n`` indices (or the given index array) into ``k`` near-equal chunks."""
    pool = _pool(n)
    if k < 1:
        raise ConfigurationError(f"client count must be >= 1, got {k}")
    if len(pool) < k:
        raise ConfigurationError(f"cannot split {len(pool)} points among {k} clients")
    perm = pool[rng_for(seed, "iid_partition").permutation(len(pool))]
    return Partition([np.sort(c) for c in np.array_split(perm, k)], "iid", seed)


@dataclass(frozen=True, eq=False)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list
    iterations: int


def _assign(X, C):
    d2 = cdist(X, C, "sqeuclidean")
    labels = np.argmin(d2, axis=1)  # first minimum -> lowest index on ties
    return labels, d2[np.arange(len(X)), labels]


def _kmeanspp(X, k, rng):
    n = len(X)
    centers = [int(rng.integers(n))]
    d2 = cdist(X, X[centers], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a chosen centre; pick any unused index
            unused = np.setdiff1d(np.arange(n), centers)
            nxt = int(rng.choice(unused))
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, cdist(X, X[nxt:nxt + 1], "sqeuclidean")[:, 0])
    return X[centers].copy()


def kmeans(points, k: int, seed: int, max_iters: int = 100, tol: float = 1e-4) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded at the point farthest from its centroid.
    """
    X = np.asarray(points, dtype=np.float64)
    n = len(X)
    if k < 1 or n < k:
        raise ConfigurationError(f"k-means needs 1 <= k <= n, got k={k}, n={n}")
    rng = rng_for(seed, "kmeans")
    C = _kmeanspp(X, k, rng)
    labels, d2 = _assign(X, C)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        new = np.empty_like(C)
        far = d2.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = X[members].mean(axis=0)
            else:
                p = int(np.argmax(far))
                new[j] = X[p]
                far[p] = -1.0
        shift = float(np.sqrt(((new - C) ** 2).sum(axis=1)).max())
        C = new
        labels, d2 = _assign(X, C)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    return KMeansResult(C, labels, history[-1], history, it)


def biased_partition(data, k: int, seed: int, indices=None) -> Partition:
    """One client per k-means cluster of the points being distributed.

    ``data`` is a :class:`Dataset` or a feature matrix; ``indices`` restricts
    the pool (default: every row).
    """
    X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    pool = np.arange(len(X)) if indices is None else np.asarray(indices, dtype=np.intp)
    res = kmeans(X[pool], k, seed)
    parts = [pool[res.labels == j] for j in range(k)]
    return Partition(parts, "biased", seed, res.centroids)


def make_partition(scheme: str, data, k: int, seed: int, indices=None) -> Partition:
    if scheme == "iid":
        n = len(data) if indices is None else indices
        return iid_partition(n, k, seed)
    if scheme == "biased":
        return biased_partition(data, k, seed, indices)
    raise ConfigurationError(f"unknown split scheme {scheme!r}")


def stratified_kfold(data, folds: int, seed: int):
    """Stratified ``(train, test)`` index pairs.

    ``data`` is a :class:`Dataset` or a boolean anomaly mask.  Each class is
    shuffled and dealt round-robin, continuing the rotation across classes.
    """
    y = data.is_anomaly if isinstance(data, Dataset) else np.asarray(data, dtype=bool)
    if folds < 2:
        raise ConfigurationError(f"need at least 2 folds, got {folds}")
    rng = rng_for(seed, "stratified_kfold", folds)
    order = []
    for cls in (False, True):
        members = np.flatnonzero(y == cls)
        if 0 < len(members) < folds:
            raise ConfigurationError(
                f"class {'anomaly' if cls else 'normal'} has {len(members)} members, fewer than {folds} folds"
            )
        order.append(members[rng.permutation(len(members))])
    order = np.concatenate(order)
    fold_of = np.empty(len(y), dtype=np.intp)
    fold_of[order] = np.arange(len(order)) % folds
    everything = np.arange(len(y))
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(folds)]


def generate_synthetic_benchmark(n_normal: int, n_anomaly: int, d: int, seed: int,
                                 n_centers: int = 3, spread: float = 0.05,
                                 margin: float = 0.25) -> Dataset:
    """Gaussian-mixture normals plus uniform anomalies kept ``margin`` away from every centre.

    Centres and margin are stored in ``meta``.
    """
    if min(n_normal, n_anomaly, d, n_centers) < 1:
        raise ConfigurationError("counts and dimension must all be >= 1")
    rng = rng_for(seed, "synthetic_benchmark")
    centers = rng.uniform(0.3, 0.7, size=(n_centers, d))
    normals = np.empty((n_normal, d))
    filled = 0
    while filled < n_normal:
        comp = rng.integers(n_centers, size=n_normal)
        draw = centers[comp] + spread * rng.standard_normal((n_normal, d))
        ok = draw[np.all((draw >= 0) & (draw <= 1), axis=1)]
        take = min(len(ok), n_normal - filled)
        normals[filled:filled + take] = ok[:take]
        filled += take
    anomalies = np.empty((n_anomaly, d))
    filled = 0
    tries = 0
    while filled < n_anomaly:
        tries += 1
        if tries > 10_000:
            raise ConfigurationError("margin leaves no room for anomalies in the unit cube")
        draw = rng.uniform(0.0, 1.0, size=(max(n_anomaly, 16), d))
        ok = draw[cdist(draw, centers).min(axis=1) >= margin]
        take = min(len(ok), n_anomaly - filled)
        anomalies[filled:filled + take] = ok[:take]
        filled += take
    X = np.vstack([normals, anomalies])
    y = np.r_[np.zeros(n_normal, bool), np.ones(n_anomaly, bool)]
    return Dataset(X, y, f"synthetic-{seed}", meta={"centers": centers, "margin": margin})


def breast_cancer_dataset() -> Dataset:
    """The unsupervised-AD Breast Cancer benchmark rebuilt from scikit-learn's copy of WDBC.

    All 357 benign records are normal; only the first 10 malignant records
    are kept, as anomalies.  Row order follows the original file.
    """
    from sklearn.datasets import load_breast_cancer

    X, y = load_breast_cancer(return_X_y=True)
    malignant = np.flatnonzero(y == 0)[:10]
    keep = np.sort(np.r_[malignant, np.flatnonzero(y == 1)])
    return Dataset(X[keep], y[keep] == 0, "breast-cancer")


def data_dir() -> Path:
    env = os.environ.get("SVFED_DATA_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


def load_benchmark(name: str, directory=None) -> Dataset:
    """Load one of the four benchmarks by short name.

    Looks for the published CSV in ``directory`` (default ``$SVFED_DATA_DIR``
    or ``./data``); Breast Cancer falls back to scikit-learn.
    """
    if name not in BENCHMARK_FILES:
        raise ConfigurationError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARK_FILES)}")
    path = Path(directory or data_dir()) / BENCHMARK_FILES[name]
    if path.is_file():
        return load_dataset(path, name=name)
    if name == "breast-cancer":
        return breast_cancer_dataset()
    raise FileNotFoundError(
        f"benchmark {name!r} not found at {path}; place {BENCHMARK_FILES[name]} there "
        "or point SVFED_DATA_DIR at the directory holding it"
    )
