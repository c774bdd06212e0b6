"""In-process federation: Ensemble SVDD and Support Vector Election.

Clients are simulated as pure functions of (local data, hyperparameters,
derived seed).  Whatever a client hands to the server is a fresh array, and
the server merges client results in client-index order, so runs are
reproducible regardless of how the client loop is scheduled.
"""
from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import svdd
from ._rng import rng_for
from .data import Dataset
from .errors import (
    ClientError,
    ConfigurationError,
    InvalidInputError,
    SamplerStarvationError,
    SvfedError,
)
from .svdd import SolverSettings, SvddHyperparams, SvddModel, Verdict

__all__ = [
    "FederationConfig",
    "SyntheticSamplerParams",
    "SveParams",
    "EnsembleModel",
    "SveModel",
    "ProtocolRecord",
    "AnonymisedVector",
    "AnonymisationWarning",
    "select_clients",
    "synthetic_dataset",
    "run_esvdd",
    "ensemble_predict",
    "ensemble_score",
    "anonymise_support_vector",
    "anonymise_support_vectors",
    "run_sve",
]


class AnonymisationWarning(UserWarning):
    """An SV could not be brought within tau of its original R2 and was sent unchanged."""


@dataclass(frozen=True)
class FederationConfig:
    k: int
    f: float = 1.0
    seed: int = 0
    scheme: str = "iid"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"client count K must be >= 1, got {self.k}")
        if not (0 < self.f <= 1):
            raise ConfigurationError(f"client fraction F must lie in (0, 1], got {self.f}")
        if self.scheme not in ("iid", "biased"):
            raise ConfigurationError(f"unknown split scheme {self.scheme!r}")

    @property
    def selected_count(self) -> int:
        # floor(F*K) with a guard against 0.1*10 = 0.9999... style rounding
        return max(int(math.floor(self.f * self.k + 1e-9)), 1)


@dataclass(frozen=True)
class SyntheticSamplerParams:
    sv_component_stddev: float = 0.05
    mixture_weight_fit: float = 0.5
    target_size: Optional[int] = None  # None -> min(local n, 500)
    max_attempts: Optional[int] = None  # None -> max(50 * target_size, 10000)

    def __post_init__(self):
        if not self.sv_component_stddev > 0:
            raise ConfigurationError("sv_component_stddev must be positive")
        if not (0 <= self.mixture_weight_fit <= 1):
            raise ConfigurationError("mixture_weight_fit must lie in [0, 1]")
        if self.target_size is not None and self.target_size < 1:
            raise ConfigurationError("target_size must be positive")
        if self.max_attempts is not None and self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be positive")

    def resolve(self, n_local: int) -> tuple[int, int]:
        target = self.target_size if self.target_size is not None else min(n_local, 500)
        attempts = self.max_attempts if self.max_attempts is not None else max(50 * target, 10_000)
        return target, attempts


@dataclass(frozen=True)
class SveParams:
    sigma: float = 1.0
    tau: float = 1e-3
    epsilon_step: float = 0.1
    max_correction_iters: int = 500

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if not (0 < self.epsilon_step < 1):
            raise ConfigurationError("epsilon_step must lie in (0, 1)")
        if self.max_correction_iters < 1:
            raise ConfigurationError("max_correction_iters must be positive")


@dataclass
class ProtocolRecord:
    """What a protocol run did, for reports and debugging."""

    algorithm: str
    k: int
    f: float
    seed: int
    scheme: str
    anonymise: bool
    selected: list = field(default_factory=list)
    sv_counts: dict = field(default_factory=dict)
    fallback_counts: dict = field(default_factory=dict)
    synthetic_sizes: dict = field(default_factory=dict)
    server_sv_count: Optional[int] = None
    adjustments: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self, with_timings: bool = True) -> dict:
        d = {
            "algorithm": self.algorithm,
            "k": self.k,
            "f": self.f,
            "seed": self.seed,
            "scheme": self.scheme,
            "anonymise": self.anonymise,
            "selected": list(self.selected),
            "sv_counts": {str(c): v for c, v in self.sv_counts.items()},
            "fallback_counts": {str(c): v for c, v in self.fallback_counts.items()},
            "synthetic_sizes": {str(c): v for c, v in self.synthetic_sizes.items()},
            "server_sv_count": self.server_sv_count,
            "adjustments": list(self.adjustments),
        }
        if with_timings:
            d["timings"] = dict(self.timings)
        return d


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    members: tuple
    client_ids: tuple = ()
    record: Optional[ProtocolRecord] = None

    def __post_init__(self):
        if not self.members:
            raise InvalidInputError("an ensemble needs at least one member")
        dims = {m.dim for m in self.members}
        if len(dims) != 1:
            raise InvalidInputError(f"ensemble members disagree on dimension: {sorted(dims)}")

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def transmitted(self) -> np.ndarray:
        return np.vstack([m.support_vectors for m in self.members])

    def score(self, x):
        return ensemble_score(self, x)

    def predict(self, x):
        return ensemble_predict(self, x)


@dataclass(frozen=True, eq=False)
class SveModel:
    model: SvddModel
    contributed_sv_counts: dict
    transmitted_vectors: np.ndarray = field(repr=False, default=None)
    record: Optional[ProtocolRecord] = None

    def transmitted(self) -> np.ndarray:
        return self.transmitted_vectors

    def score(self, x):
        return svdd.score(self.model, x)

    def predict(self, x):
        return svdd.predict(self.model, x)


def select_clients(config: FederationConfig) -> list[int]:
    """Sample ``max(floor(F*K), 1)`` distinct clients; returned in index order."""
    rng = rng_for(config.seed, "select_clients", config.k, config.f)
    chosen = rng.choice(config.k, size=config.selected_count, replace=False)
    return sorted(int(c) for c in chosen)


def _features(client) -> np.ndarray:
    X = client.features if isinstance(client, Dataset) else np.asarray(client, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise InvalidInputError(f"client data must be a non-empty matrix, got shape {X.shape}")
    return X


def synthetic_dataset(model: SvddModel, local_data, params: SyntheticSamplerParams = SyntheticSamplerParams(),
                      seed: int = 0, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Rejection-sample points inside the sphere of ``model``.

    Proposals come from a two-part mixture: with probability
    ``mixture_weight_fit`` a diagonal Gaussian fitted to ``local_data``,
    otherwise a small isotropic Gaussian around a uniformly chosen SV.
    """
    X = _features(local_data)
    if X.shape[1] != model.dim:
        raise InvalidInputError(f"dimension mismatch: model {model.dim}, data {X.shape[1]}")
    target, attempts = params.resolve(len(X))
    rng = rng if rng is not None else rng_for(seed, "synthetic_dataset")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    sv = model.support_vectors
    accepted = []
    n_acc = 0
    used = 0
    while used < attempts and n_acc < target:
        batch = min(max(2 * (target - n_acc), 64), attempts - used)
        from_fit = rng.random(batch) < params.mixture_weight_fit
        which = rng.integers(len(sv), size=batch)
        noise = rng.standard_normal((batch, model.dim))
        draws = np.where(from_fit[:, None], mean + std * noise,
                         sv[which] + params.sv_component_stddev * noise)
        inside = svdd.score(model, draws) >= 0.0
        ok = np.flatnonzero(inside)
        if n_acc + len(ok) >= target:
            # stop at the draw that completes the sample
            ok = ok[: target - n_acc]
            used += int(ok[-1]) + 1
        else:
            used += batch
        accepted.append(draws[ok])
        n_acc += len(ok)
    if n_acc == 0:
        raise SamplerStarvationError(
            f"no draw fell inside the sphere in {used} attempts (radius^2={model.radius_squared:.3g})"
        )
    return np.vstack(accepted)


def _map_clients(fn, ids, workers):
    if workers and workers > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, ids))
    return [fn(c) for c in ids]


def _feasible(hp: SvddHyperparams, n: int, strict: bool, who: str, notes: list) -> SvddHyperparams:
    """``hp`` itself, or with C raised to 1/n when ``strict`` is off and C*n < 1."""
    if strict or hp.c * n >= 1 - 1e-12:
        return hp
    c = min(1.0, 1.0 / n)
    notes.append(f"{who}: C raised from {hp.c:.6g} to {c:.6g} for n={n}")
    return SvddHyperparams(c, hp.gamma)


def _train_client(cid, X, hp, settings, strict=True, notes=None):
    try:
        hp = _feasible(hp, len(X), strict, f"client {cid}", notes if notes is not None else [])
        return svdd.train_svdd(X, hp, settings)
    except SvfedError as exc:
        raise ClientError(cid, exc) from exc


def run_esvdd(clients: Sequence, hp: SvddHyperparams, config: FederationConfig,
              sampler: SyntheticSamplerParams = SyntheticSamplerParams(), anonymise: bool = True,
              settings: SolverSettings = svdd.DEFAULT_SETTINGS, workers: int = 1,
              strict: bool = True) -> EnsembleModel:
    """One round of Ensemble SVDD over ``clients`` (one data matrix per client).

    With ``strict=False`` an infeasible C is raised to 1/n for the client (or
    synthetic sample) concerned, and a client whose sampler starves is left
    out of the ensemble; both are noted in ``record.adjustments``.
    """
    if len(clients) != config.k:
        raise ConfigurationError(f"config has K={config.k} but {len(clients)} client datasets were given")
    record = ProtocolRecord("esvdd", config.k, config.f, config.seed, config.scheme, anonymise)
    t0 = time.perf_counter()
    selected = select_clients(config)
    record.selected = selected

    def client_round(cid):
        notes = []
        X = _features(clients[cid])
        local = _train_client(cid, X, hp, settings, strict, notes)
        if not anonymise:
            return local, None, notes
        try:
            synth = synthetic_dataset(local, X, sampler,
                                      rng=rng_for(config.seed, "esvdd_sampler", cid))
        except SamplerStarvationError as exc:
            if strict:
                raise ClientError(cid, exc) from exc
            notes.append(f"client {cid}: dropped, {exc}")
            return None, 0, notes
        try:
            hp_s = _feasible(hp, len(synth), strict, f"client {cid} synthetic", notes)
            return svdd.train_svdd(synth, hp_s, settings), len(synth), notes
        except SvfedError as exc:
            raise ClientError(cid, exc) from exc

    results = _map_clients(client_round, selected, workers)
    t1 = time.perf_counter()
    members, ids = [], []
    for cid, (model, n_synth, notes) in zip(selected, results):
        record.adjustments.extend(notes)
        if n_synth is not None:
            record.synthetic_sizes[cid] = n_synth
        if model is None:
            continue
        members.append(model)
        ids.append(cid)
        record.sv_counts[cid] = model.n_support
    if not members:
        raise SamplerStarvationError("every selected client was dropped; the ensemble is empty")
    ens = EnsembleModel(tuple(members), tuple(ids), record)
    record.timings = {"clients": t1 - t0, "server": time.perf_counter() - t1}
    return ens


def _member_scores(ensemble: EnsembleModel, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.ndim != 2 or X.shape[1] != ensemble.dim:
        raise InvalidInputError(f"dimension mismatch: ensemble has {ensemble.dim} features, got {x.shape}")
    return np.vstack([svdd.score(m, X) for m in ensemble.members]), single


def ensemble_score(ensemble: EnsembleModel, x):
    """Best member score when some member accepts ``x``, else the sum of all scores."""
    S, single = _member_scores(ensemble, x)
    best = S.max(axis=0)
    out = np.where(best >= 0.0, best, S.sum(axis=0))
    return float(out[0]) if single else out


def ensemble_predict(ensemble: EnsembleModel, x):
    """Inlier iff at least one member predicts inlier.

    Returns a :class:`Verdict` for one vector, a boolean inlier mask for a matrix.
    """
    S, single = _member_scores(ensemble, x)
    inlier = (S >= 0.0).any(axis=0)
    if single:
        return Verdict.INLIER if inlier[0] else Verdict.OUTLIER
    return inlier


class AnonymisedVector(NamedTuple):
    q: np.ndarray
    fell_back: bool
    steps: int


def anonymise_support_vector(model: SvddModel, v, params: SveParams = SveParams(), seed: int = 0,
                             rng: Optional[np.random.Generator] = None) -> AnonymisedVector:
    """Replace ``v`` by a Gaussian perturbation pulled back until its R2 is within tau.

    If ``max_correction_iters`` steps are not enough the original vector is
    returned with ``fell_back=True`` and an :class:`AnonymisationWarning`.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.dim,):
        raise InvalidInputError(f"dimension mismatch: model has {model.dim} features, got {v.shape}")
    rng = rng if rng is not None else rng_for(seed, "anonymise")
    r2v = svdd.r_squared(model, v)
    q = v + params.sigma * rng.standard_normal(model.dim)
    steps = 0
    while abs(r2v - svdd.r_squared(model, q)) > params.tau:
        if steps >= params.max_correction_iters:
            warnings.warn(f"anonymisation gave up after {steps} steps", AnonymisationWarning, stacklevel=2)
            return AnonymisedVector(v.copy(), True, steps)
        q = q - params.epsilon_step * (q - v)
        steps += 1
    return AnonymisedVector(q, False, steps)


def anonymise_support_vectors(model: SvddModel, V, params: SveParams = SveParams(),
                              rng: Optional[np.random.Generator] = None):
    """Batch form of :func:`anonymise_support_vector` over the rows of ``V``.

    Returns ``(Q, fell_back_mask, steps)``.  Rows are corrected together but
    each stops moving as soon as it satisfies the threshold.
    """
    V = np.asarray(V, dtype=np.float64)
    rng = rng if rng is not None else rng_for(0, "anonymise")
    r2v = svdd.r_squared(model, V)
    Q = V + params.sigma * rng.standard_normal(V.shape)
    steps = np.zeros(len(V), dtype=np.int64)
    active = np.abs(r2v - svdd.r_squared(model, Q)) > params.tau
    while active.any():
        stuck = active & (steps >= params.max_correction_iters)
        if stuck.any():
            break
        idx = np.flatnonzero(active)
        Q[idx] = Q[idx] - params.epsilon_step * (Q[idx] - V[idx])
        steps[idx] += 1
        active[idx] = np.abs(r2v[idx] - svdd.r_squared(model, Q[idx])) > params.tau
    fell_back = active.copy()
    if fell_back.any():
        Q[fell_back] = V[fell_back]
        warnings.warn(f"anonymisation gave up on {int(fell_back.sum())} support vectors",
                      AnonymisationWarning, stacklevel=2)
    return Q, fell_back, steps


def run_sve(clients: Sequence, hp: SvddHyperparams, config: FederationConfig,
            params: SveParams = SveParams(), anonymise: bool = True,
            settings: SolverSettings = svdd.DEFAULT_SETTINGS, workers: int = 1,
            strict: bool = True) -> SveModel:
    """One round of Support Vector Election: clients elect (anonymised) SVs, the server retrains.

    ``strict=False`` raises an infeasible C to 1/n (per client and at the
    server) instead of failing.
    """
    if len(clients) != config.k:
        raise ConfigurationError(f"config has K={config.k} but {len(clients)} client datasets were given")
    record = ProtocolRecord("sve", config.k, config.f, config.seed, config.scheme, anonymise)
    t0 = time.perf_counter()
    selected = select_clients(config)
    record.selected = selected

    def client_round(cid):
        notes = []
        X = _features(clients[cid])
        local = _train_client(cid, X, hp, settings, strict, notes)
        V = np.array(local.support_vectors)
        if not anonymise:
            return V, 0, notes
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnonymisationWarning)
            Q, fell_back, _ = anonymise_support_vectors(
                local, V, params, rng=rng_for(config.seed, "sve_anonymise", cid))
        return Q, int(fell_back.sum()), notes

    results = _map_clients(client_round, selected, workers)
    t1 = time.perf_counter()
    for cid, (V, fb, notes) in zip(selected, results):
        record.sv_counts[cid] = len(V)
        record.fallback_counts[cid] = fb
        record.adjustments.extend(notes)
    n_fallback = sum(record.fallback_counts.values())
    if n_fallback:
        warnings.warn(f"{n_fallback} support vectors sent without anonymisation",
                      AnonymisationWarning, stacklevel=2)
    merged = np.vstack([V for V, _, _ in results])
    try:
        server_hp = _feasible(hp, len(merged), strict, "server", record.adjustments)
        server_hp.check_feasible(len(merged))
    except ConfigurationError as exc:
        raise ConfigurationError(f"server retraining on {len(merged)} vectors: {exc}") from exc
    model = svdd.train_svdd(merged, server_hp, settings)
    record.server_sv_count = model.n_support
    record.timings = {"clients": t1 - t0, "server": time.perf_counter() - t1}
    return SveModel(model, dict(record.sv_counts), merged, record)
