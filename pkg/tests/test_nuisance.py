import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from drdid.data import Sample
from drdid.errors import InsufficientStratum, LearnerFailure
from drdid.nuisance import (
    L1Linear,
    LearnerSpec,
    SeparationWarning,
    cross_fit,
    fit_l1_logistic,
    misspecify,
    nuisance_features,
    oracle_nuisance,
    stratified_folds,
)
from drdid.simulation import DgpConfig, gen_sample

CONST = LearnerSpec("constant")


def _small(n=40, p=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    d = (rng.uniform(size=n) < expit(x[:, 0])).astype(float)
    d[:2] = [0, 1]
    return Sample(x[:, 0] + d + rng.normal(size=n), d, x, rng.normal(size=n))


def _ml_oracle(x, d):
    a = np.column_stack([np.ones(len(d)), x])

    def nll(c):
        eta = a @ c
        return np.mean(np.logaddexp(0, eta) - d * eta)

    def grad(c):
        return a.T @ (expit(a @ c) - d) / len(d)

    return minimize(nll, np.zeros(a.shape[1]), jac=grad, method="BFGS", options={"gtol": 1e-10}).x


# ------------------------------------------------------------ logistic

def test_logistic_null_model():
    d = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0], dtype=float)
    coef, b0 = fit_l1_logistic(np.zeros((10, 3)), d, 0.05)
    assert np.all(coef == 0)
    assert b0 == pytest.approx(np.log(0.3 / 0.7), abs=1e-9)


def test_logistic_large_penalty_kills_slopes(rng):
    x = rng.normal(size=(100, 4))
    d = (x[:, 0] > 0).astype(float)
    coef, b0 = fit_l1_logistic(x, d, 1e6)
    assert np.all(coef == 0)
    assert b0 == pytest.approx(np.log(d.mean() / (1 - d.mean())), abs=1e-9)


def test_logistic_unpenalized_matches_ml_oracle(rng):
    x = rng.normal(size=(200, 5))
    d = (rng.uniform(size=200) < expit(0.3 + x @ [1, -1, 0.5, 0, 0])).astype(float)
    coef, b0 = fit_l1_logistic(x, d, 0.0)
    np.testing.assert_allclose(np.r_[b0, coef], _ml_oracle(x, d), atol=1e-5)


def test_logistic_close_to_ml_oracle_n200_p5():
    # the unpenalized oracle is the reference; the truth itself sits about
    # 0.3 away from any estimator at this n
    truth = np.array([1.0, -1.0, 0.5, 0.0, 0.0])
    lam = 0.1 * np.sqrt(np.log(5) / 200)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(200, 5))
        d = (rng.uniform(size=200) < expit(x @ truth)).astype(float)
        coef, _ = fit_l1_logistic(x, d, lam)
        assert np.linalg.norm(coef - _ml_oracle(x, d)[1:]) <= 0.3


@given(seed=st.integers(0, 10_000), lam=st.floats(1e-3, 0.3))
@settings(max_examples=25)
def test_logistic_kkt(seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 6))
    d = (rng.uniform(size=60) < expit(x[:, 0] - x[:, 1])).astype(float)
    if d.min() == d.max():
        return
    coef, b0 = fit_l1_logistic(x, d, lam, tol=1e-9)
    g = x.T @ (d - expit(b0 + x @ coef)) / 60
    assert abs(np.mean(d - expit(b0 + x @ coef))) < 1e-7
    on = coef != 0
    assert np.all(np.abs(g[~on]) <= lam + 1e-7)
    np.testing.assert_allclose(g[on], lam * np.sign(coef[on]), atol=1e-7)


def test_logistic_separation_warns():
    x = np.linspace(-1, 1, 20)[:, None]
    d = (x[:, 0] > 0).astype(float)
    with pytest.warns(SeparationWarning):
        fit_l1_logistic(x, d, 0.0, max_iter=200)


def test_logistic_single_class_rejected():
    with pytest.raises(ValueError):
        fit_l1_logistic(np.zeros((5, 1)), np.ones(5), 0.1)


def test_l1_linear_refit_removes_shrinkage(rng):
    x = rng.normal(size=(300, 10))
    y = 3 * x[:, 0] + 0.1 * rng.normal(size=300)
    plain = L1Linear(lam=0.5).fit(x, y)
    refit = L1Linear(lam=0.5, refit=True).fit(x, y)
    # loss is mean squared error, so the slope shrinks by lam / 2
    assert plain.coef_[0] / plain.std.sd[0] < 2.8
    assert refit.coef_[0] / refit.std.sd[0] == pytest.approx(3.0, abs=0.02)


def test_learner_spec_validation():
    with pytest.raises(ValueError):
        LearnerSpec("forest")
    with pytest.raises(ValueError):
        LearnerSpec("l1_linear", 0.0)
    LearnerSpec("ols", 0.0)


# ------------------------------------------------------------ cross-fitting

def test_constant_learners_give_training_means():
    s = _small(n=40)
    fit = cross_fit(s, CONST, CONST, k=2, seed=1)
    for f in range(2):
        test, train = fit.fold_id == f, fit.fold_id != f
        assert np.all(fit.pi_hat[test] == np.clip(s.d[train].mean(), 0.01, 0.99))
        np.testing.assert_allclose(fit.phi1_hat[test], s.dy[train & (s.d == 1)].mean(), rtol=1e-14)
        np.testing.assert_allclose(fit.phi0_hat[test], s.dy[train & (s.d == 0)].mean(), rtol=1e-14)


def test_small_sample_deterministic_and_stratified():
    s = _small(n=8)
    a = cross_fit(s, CONST, CONST, k=2, seed=5)
    b = cross_fit(s, CONST, CONST, k=2, seed=5)
    assert a.equals(b)
    assert np.array_equal(a.fold_id, stratified_folds(s.d, 2, 5))
    for f in range(2):
        rows = a.fold_id == f
        assert 0 < s.d[rows].sum() < rows.sum()


@given(seed=st.integers(0, 2**31 - 1), k=st.integers(2, 5))
def test_folds_balanced_per_arm(seed, k):
    d = np.random.default_rng(seed).integers(0, 2, size=53).astype(float)
    d[: 2 * k] = np.tile([0.0, 1.0], k)
    fold = stratified_folds(d, k, seed)
    for arm in (0.0, 1.0):
        counts = np.bincount(fold[d == arm], minlength=k)
        assert counts.max() - counts.min() <= 1


class _Recorder:
    """Outcome learner that remembers which row ids it trained on."""

    seen = []

    def fit(self, x, y):
        self.train_ids = set(x[:, 0].astype(int).tolist())
        self.mean = float(np.mean(y))
        return self

    def predict(self, x):
        ids = set(x[:, 0].astype(int).tolist())
        _Recorder.seen.append((self.train_ids, ids))
        return np.full(x.shape[0], self.mean)


def test_out_of_fold_purity():
    s = _small(n=30, p=2)
    x = np.column_stack([np.arange(30.0), s.x])
    s = Sample(s.dy, s.d, x, s.z)
    _Recorder.seen = []
    cross_fit(s, CONST, _Recorder(), k=3, seed=2)
    assert len(_Recorder.seen) == 6
    for train, test in _Recorder.seen:
        assert train and not train & test


def test_clipping_always_applied(rng):
    s = _small(n=60)
    fit = cross_fit(s, LearnerSpec("l1_logistic"), CONST, k=2, epsilon=0.2, seed=0)
    assert fit.pi_hat.min() >= 0.2 and fit.pi_hat.max() <= 0.8


def test_insufficient_stratum():
    s = _small(n=12)
    with pytest.raises(InsufficientStratum):
        cross_fit(s, CONST, CONST, k=4)
    d = np.zeros(12)
    d[0] = 1
    s2 = Sample(s.dy, d, s.x, s.z)
    with pytest.raises(InsufficientStratum):
        cross_fit(s2, CONST, CONST, k=2)


class _Broken:
    def fit(self, x, y):
        raise RuntimeError("boom")


def test_learner_failure_carries_context():
    with pytest.raises(LearnerFailure) as e:
        cross_fit(_small(), CONST, _Broken(), k=2)
    assert e.value.fold == 0 and e.value.which == "outcome_treated"


def test_features_include_z_block():
    s = _small(n=20, p=3)
    w = nuisance_features(s, 3)
    assert w.shape == (20, 3 + 6)
    np.testing.assert_array_equal(w[:, :3], s.x)


@pytest.mark.filterwarnings("ignore:p=10")
def test_propensity_accuracy_dgp1():
    s, truth = gen_sample(DgpConfig("dgp1", 2000, 10, seed=1), 0)
    fit = cross_fit(s, LearnerSpec("l1_logistic"), CONST, k=2, seed=1)
    assert np.mean(np.abs(fit.pi_hat - truth.pi0(s.x, s.z))) <= 0.08


# ------------------------------------------------------------ misspecify

def _oracle_fit():
    s, truth = gen_sample(DgpConfig("dgp1", 200, 20, seed=0), 0)
    return oracle_nuisance(s, truth)


def test_misspecify_constant_modes():
    fit = _oracle_fit()
    p = misspecify(fit, "propensity", "constant")
    assert np.unique(p.pi_hat).size == 1
    assert np.array_equal(p.phi1_hat, fit.phi1_hat)
    o = misspecify(fit, "outcomes", "constant")
    assert np.unique(o.phi1_hat).size == 1 and np.unique(o.phi0_hat).size == 1
    assert np.array_equal(o.pi_hat, fit.pi_hat)


def test_misspecify_wrong_scale():
    fit = _oracle_fit()
    o = misspecify(fit, "outcomes", "wrong_scale")
    np.testing.assert_allclose(o.phi1_hat, 1.5 * fit.phi1_hat)
    p = misspecify(fit, "propensity", "wrong_scale")
    assert p.pi_hat.max() <= 1 - fit.epsilon_clip
    with pytest.raises(ValueError):
        misspecify(fit, "both", "constant")
