import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from svfed import svdd
from svfed._rng import rng_for
from svfed.data import iid_partition
from svfed.errors import ClientError, ConfigurationError, InvalidInputError, SamplerStarvationError
from svfed.protocols import (
    AnonymisationWarning,
    EnsembleModel,
    FederationConfig,
    SveParams,
    SyntheticSamplerParams,
    anonymise_support_vector,
    anonymise_support_vectors,
    ensemble_predict,
    ensemble_score,
    run_esvdd,
    run_sve,
    select_clients,
    synthetic_dataset,
)
from svfed.svdd import SvddHyperparams, Verdict


def blob(seed, n=40, d=2, center=0.5):
    return np.random.default_rng(seed).normal(center, 0.1, (n, d))


def split(X, k, seed=0):
    return [X[a] for a in iid_partition(len(X), k, seed).assignments]


def test_config_validation():
    with pytest.raises(ConfigurationError):
        FederationConfig(k=0)
    with pytest.raises(ConfigurationError):
        FederationConfig(k=2, f=1.5)
    with pytest.raises(ConfigurationError):
        FederationConfig(k=2, scheme="other")
    with pytest.raises(ConfigurationError):
        SveParams(epsilon_step=1.0)
    with pytest.raises(ConfigurationError):
        SyntheticSamplerParams(mixture_weight_fit=1.5)


@pytest.mark.parametrize("k,f,t", [(2, 1.0, 2), (10, 0.5, 5), (5, 0.5, 2), (2, 0.5, 1), (1, 0.5, 1),
                                   (10, 0.1, 1), (10, 0.3, 3), (3, 1.0, 3)])
def test_selection_count(k, f, t):
    cfg = FederationConfig(k, f, seed=7)
    sel = select_clients(cfg)
    assert cfg.selected_count == t
    assert len(sel) == t == len(set(sel))
    assert all(0 <= c < k for c in sel)
    assert sel == select_clients(FederationConfig(k, f, seed=7))


def test_selection_is_spread_over_clients():
    seen = {tuple(select_clients(FederationConfig(10, 0.5, seed=s))) for s in range(40)}
    assert len(seen) > 30


@pytest.fixture(scope="module")
def healthy():
    X = blob(0)
    return svdd.train_svdd(X, SvddHyperparams(0.2)), X


def test_sampler_points_are_inside(healthy):
    model, X = healthy
    S = synthetic_dataset(model, X, SyntheticSamplerParams(target_size=50), seed=3)
    assert S.shape == (50, 2)
    assert np.all(svdd.score(model, S) >= 0)


def test_sampler_mixture_degenerate_to_fit(healthy):
    model, X = healthy
    params = SyntheticSamplerParams(mixture_weight_fit=1.0, target_size=20)
    a = synthetic_dataset(model, X, params, rng=np.random.default_rng(1))
    # replay the same stream: every proposal is mean + std * noise
    rng = np.random.default_rng(1)
    rng.random(64)
    rng.integers(model.n_support, size=64)
    noise = rng.standard_normal((64, 2))
    proposals = X.mean(axis=0) + X.std(axis=0) * noise
    inside = proposals[svdd.score(model, proposals) >= 0]
    assert np.array_equal(a, inside[:20])


def test_sampler_starves_on_single_sv():
    model = svdd.train_svdd([[0.5, 0.5]], SvddHyperparams(1.0))
    with pytest.raises(SamplerStarvationError):
        synthetic_dataset(model, [[0.5, 0.5]],
                          SyntheticSamplerParams(mixture_weight_fit=0.0, max_attempts=500))


def test_esvdd_single_client_reduction():
    X = blob(1)
    hp = SvddHyperparams(0.3)
    ens = run_esvdd([X], hp, FederationConfig(1, 1.0, seed=2), anonymise=False)
    ref = svdd.train_svdd(X, hp)
    assert len(ens.members) == 1 and ens.members[0].same_as(ref)
    Q = np.random.default_rng(0).random((100, 2))
    assert np.array_equal(ensemble_score(ens, Q), svdd.score(ref, Q))


def test_esvdd_identical_clients_identical_members():
    X = blob(2)
    ens = run_esvdd([X, X.copy()], SvddHyperparams(0.3), FederationConfig(2, seed=0), anonymise=False)
    assert ens.members[0].same_as(ens.members[1])


def test_esvdd_anonymised_members_inside_pre_models():
    X = blob(3, n=60)
    parts = split(X, 2)
    hp = SvddHyperparams(0.2)
    ens = run_esvdd(parts, hp, FederationConfig(2, seed=4), anonymise=True)
    for cid, member in zip(ens.client_ids, ens.members):
        pre = svdd.train_svdd(parts[cid], hp)
        assert np.all(svdd.score(pre, member.support_vectors) >= 0)
    raw = {tuple(r) for r in X}
    assert not any(tuple(r) in raw for r in ens.transmitted())
    assert ens.record.synthetic_sizes


def test_esvdd_errors_name_the_client():
    hp = SvddHyperparams(0.2)
    clients = [blob(0, n=20), blob(1, n=3)]
    with pytest.raises(ClientError) as info:
        run_esvdd(clients, hp, FederationConfig(2), anonymise=False)
    assert info.value.client == 1
    ens = run_esvdd(clients, hp, FederationConfig(2), anonymise=False, strict=False)
    assert ens.members[1].c == pytest.approx(1 / 3)
    assert any("client 1" in note for note in ens.record.adjustments)


def test_esvdd_determinism_and_workers():
    parts = split(blob(5, n=80), 4)
    hp = SvddHyperparams(0.25)
    cfg = FederationConfig(4, 0.5, seed=11)
    a = run_esvdd(parts, hp, cfg)
    b = run_esvdd(parts, hp, cfg, workers=4)
    assert a.client_ids == b.client_ids
    assert all(x.same_as(y) for x, y in zip(a.members, b.members))


def member(center, c=0.5):
    return svdd.train_svdd(np.random.default_rng(int(center * 100)).normal(center, 0.05, (15, 2)),
                           SvddHyperparams(c))


class FixedScores:
    """Stand-in member with a fixed score, for the arithmetic examples."""

    def __init__(self, s):
        self.s, self.dim = s, 1

    def score(self, X):
        return np.full(len(X), self.s)


@pytest.fixture
def fixed(monkeypatch):
    monkeypatch.setattr(svdd, "score", lambda m, X: m.score(X))

    def make(*scores):
        return EnsembleModel(tuple(FixedScores(s) for s in scores))

    return make


def test_ensemble_score_examples(fixed):
    assert ensemble_score(fixed(0.3, -0.1), [0.0]) == pytest.approx(0.3)
    assert ensemble_score(fixed(-0.2, -0.5), [0.0]) == pytest.approx(-0.7)
    assert ensemble_score(fixed(-0.2), [0.0]) == pytest.approx(-0.2)
    assert ensemble_score(fixed(0.2), [0.0]) == pytest.approx(0.2)
    assert ensemble_predict(fixed(-0.2, -0.5), [0.0]) is Verdict.OUTLIER
    assert ensemble_predict(fixed(-0.2, 0.0, -0.5), [0.0]) is Verdict.INLIER


def test_single_member_ensemble_matches_member():
    m = member(0.3)
    ens = EnsembleModel((m,))
    Q = np.random.default_rng(0).random((200, 2))
    assert np.array_equal(ensemble_score(ens, Q), svdd.score(m, Q))
    assert np.array_equal(ensemble_predict(ens, Q), svdd.is_inlier(m, Q))
    assert ensemble_predict(ens, Q[0]) is svdd.predict(m, Q[0])


def test_ensemble_dimension_checks():
    with pytest.raises(InvalidInputError):
        EnsembleModel(())
    with pytest.raises(InvalidInputError):
        EnsembleModel((member(0.3), svdd.train_svdd(np.zeros((2, 3)) + [[0], [1]], SvddHyperparams(1.0))))
    with pytest.raises(InvalidInputError):
        ensemble_score(EnsembleModel((member(0.3),)), [0.0, 0.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.2, 0.8), min_size=1, max_size=4), st.integers(0, 1000))
def test_ensemble_consistency_and_monotonicity(centers, seed):
    members = tuple(member(c) for c in centers)
    ens = EnsembleModel(members)
    Q = np.random.default_rng(seed).random((100, 2))
    s = ensemble_score(ens, Q)
    p = ensemble_predict(ens, Q)
    assert np.array_equal(s >= 0, p)
    bigger = EnsembleModel(members + (member(0.5, 0.3),))
    assert np.all(ensemble_predict(bigger, Q)[p])


def test_anonymise_noiseless_limit(healthy):
    model, _ = healthy
    v = model.support_vectors[0]
    out = anonymise_support_vector(model, v, SveParams(sigma=1e-12), seed=0)
    assert not out.fell_back and out.steps == 0
    assert np.allclose(out.q, v, atol=1e-10)


def test_anonymise_contract_and_contraction(healthy):
    model, _ = healthy
    params = SveParams(sigma=1.0, tau=1e-3, epsilon_step=0.1)
    for i, v in enumerate(model.support_vectors):
        out = anonymise_support_vector(model, v, params, rng=np.random.default_rng(i))
        assert out.fell_back or abs(svdd.r_squared(model, v) - svdd.r_squared(model, out.q)) <= 1e-3
        q0 = v + 1.0 * np.random.default_rng(i).standard_normal(2)
        expected = 0.9 ** out.steps * np.linalg.norm(q0 - v)
        assert np.linalg.norm(out.q - v) == pytest.approx(expected, rel=1e-9)


def test_anonymise_fallback_warns(healthy):
    model, _ = healthy
    v = model.support_vectors[0]
    params = SveParams(sigma=5.0, tau=1e-12, max_correction_iters=1)
    with pytest.warns(AnonymisationWarning):
        out = anonymise_support_vector(model, v, params, seed=1)
    assert out.fell_back and np.array_equal(out.q, v)


def test_batch_anonymisation_matches_contract(healthy):
    model, _ = healthy
    V = model.support_vectors
    Q, fell_back, steps = anonymise_support_vectors(model, V, rng=np.random.default_rng(5))
    gap = np.abs(svdd.r_squared(model, V) - svdd.r_squared(model, Q))
    assert np.all((gap <= 1e-3) | fell_back)
    assert not fell_back.any()


def test_sve_single_client_reduction():
    X = blob(6)
    hp = SvddHyperparams(0.3)
    out = run_sve([X], hp, FederationConfig(1), anonymise=False)
    local = svdd.train_svdd(X, hp)
    sv_set = {tuple(r) for r in local.support_vectors}
    assert all(tuple(r) in sv_set for r in out.model.support_vectors)
    assert out.contributed_sv_counts == {0: local.n_support}


def test_sve_anonymised_transmits_no_raw_point():
    X = blob(7, n=60)
    parts = split(X, 3)
    out = run_sve(parts, SvddHyperparams(0.3), FederationConfig(3, seed=1), anonymise=True)
    raw = {tuple(r) for r in X}
    assert not any(tuple(r) in raw for r in out.transmitted())
    assert sum(out.record.fallback_counts.values()) == 0


def test_sve_identical_clients_same_geometry():
    X = blob(8, n=30)
    hp = SvddHyperparams(1.0)
    single = run_sve([X], hp, FederationConfig(1), anonymise=False)
    double = run_sve([X, X.copy()], hp, FederationConfig(2), anonymise=False)
    assert len(double.transmitted()) == 2 * len(single.transmitted())
    Q = np.random.default_rng(0).random((100, 2))
    assert np.allclose(double.score(Q), single.score(Q), atol=1e-6)


@pytest.mark.parametrize("c", [0.05, 0.1, 0.5])
def test_sve_server_always_feasible(c):
    # every client sends at least 1/C vectors, so the union never breaks C*|V'| >= 1
    parts = split(blob(9, n=60), 3)
    out = run_sve(parts, SvddHyperparams(c), FederationConfig(3, 0.5, seed=2), anonymise=False)
    assert c * len(out.transmitted()) >= 1
    assert not out.record.adjustments


def test_sve_determinism():
    parts = split(blob(10, n=60), 3)
    cfg = FederationConfig(3, 1.0, seed=5)
    a = run_sve(parts, SvddHyperparams(0.3), cfg)
    b = run_sve(parts, SvddHyperparams(0.3), cfg, workers=3)
    assert a.model.same_as(b.model)
    assert np.array_equal(a.transmitted(), b.transmitted())


def test_protocol_record_serialises():
    parts = split(blob(11, n=40), 2)
    rec = run_sve(parts, SvddHyperparams(0.3), FederationConfig(2)).record
    d = rec.to_dict(with_timings=False)
    assert d["algorithm"] == "sve" and "timings" not in d
    assert "timings" in rec.to_dict()
