"""Cross-fitted propensity and outcome-regression estimates.

Learners follow a small fit/predict protocol. Propensity learners predict
probabilities; outcome learners predict conditional means of dy. Any
object with ``fit(x, y)`` and ``predict(x)`` (or ``predict_proba``) can be
passed in place of a :class:`LearnerSpec`.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .data import Sample, TruthInfo
from .errors import InsufficientStratum, LearnerFailure
from .sieve import BasisSpec, trig_features
from .solvers import LassoProblem, cd_gram, lasso_solve

log = logging.getLogger(__name__)

KINDS = ("l1_logistic", "l1_linear", "ols", "constant")
# trig degree of the Z block inside W for the first-stage learners
W_DEGREE = 3


class SeparationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    kind: str = "l1_linear"
    lambda_rule: float = 1.0
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        if self.kind.startswith("l1") and not self.lambda_rule > 0:
            raise ValueError("lambda_rule must be positive for penalized learners")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "lambda_rule": self.lambda_rule, "options": dict(self.options)}


def _logistic_objective(a, d, c, lam):
    eta = a @ c
    ll = np.mean(d * eta - np.logaddexp(0.0, eta))
    return -ll + lam * np.abs(c[1:]).sum()


def fit_l1_logistic(
    x: np.ndarray, d: np.ndarray, lam: float, tol: float = 1e-7, max_iter: int = 100
) -> tuple[np.ndarray, float]:
    """L1-penalized logistic regression with an unpenalized intercept.

    Maximizes mean Bernoulli log-likelihood minus ``lam * ||coef||_1`` by
    proximal Newton steps (coordinate descent on the weighted quadratic
    model, step halving on the true objective) until the KKT conditions
    hold to ``tol``. Returns ``(coef, intercept)``.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float).ravel()
    n, p = x.shape
    dbar = d.mean()
    if dbar in (0.0, 1.0):
        raise ValueError("both classes must be present")
    a = np.column_stack([np.ones(n), x])
    c = np.zeros(p + 1)
    c[0] = np.log(dbar / (1 - dbar))
    thr = np.full(p + 1, lam)
    thr[0] = 0.0
    obj = _logistic_objective(a, d, c, lam)
    for _ in range(max_iter):
        mu = expit(a @ c)
        g = a.T @ (d - mu) / n
        viol = np.abs(g[0])
        slopes = c[1:]
        gs = g[1:]
        viol = max(viol, float(np.max(np.where(
            slopes == 0, np.maximum(np.abs(gs) - lam, 0.0), np.abs(gs - lam * np.sign(slopes))
        ), initial=0.0)))
        if viol <= tol:
            break
        w = np.maximum(mu * (1 - mu), 1e-6)
        zres = (d - mu) / w
        aw = a * w[:, None]
        gram = a.T @ aw / n
        q = aw.T @ (a @ c + zres) / n
        new = cd_gram(gram, q, thr, c.copy(), tol=1e-12, max_iter=10_000).coef
        step = 1.0
        while True:
            cand = c + step * (new - c)
            cand_obj = _logistic_objective(a, d, cand, lam)
            if cand_obj <= obj + 1e-15 or step < 1e-6:
                break
            step /= 2
        if cand_obj > obj:
            break
        c, obj = cand, cand_obj
    eta = a @ c
    if np.all((eta > 0) == (d == 1)) and np.min(np.abs(eta)) > 10:
        warnings.warn("perfect separation; probabilities will be clipped", SeparationWarning)
    return c[1:].copy(), float(c[0])


class _Standardizer:
    def fit(self, x):
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.sd = np.where(sd > 0, sd, 1.0)
        return self

    def __call__(self, x):
        return (x - self.mean) / self.sd


class L1Logistic:
    """L1 logistic on standardized features.

    With ``refit`` the selected support is refit without penalty, which
    removes most of the shrinkage bias.
    """

    def __init__(self, lambda_rule: float = 1.0, lam: Optional[float] = None, refit: bool = False):
        self.lambda_rule = lambda_rule
        self.lam = lam
        self.refit = refit

    def fit(self, x, y):
        self.std = _Standardizer().fit(x)
        n, p = x.shape
        lam = self.lam
        if lam is None:
            lam = self.lambda_rule * float(np.std(y)) * np.sqrt(np.log(max(p, 2)) / n)
        self.lam_ = lam
        xs = self.std(x)
        self.coef_, self.intercept_ = fit_l1_logistic(xs, y, lam)
        if self.refit and lam > 0:
            sel = np.flatnonzero(self.coef_)
            coef = np.zeros(p)
            if sel.size and sel.size < 0.5 * n:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", SeparationWarning)
                    coef[sel], self.intercept_ = fit_l1_logistic(xs[:, sel], y, 0.0)
                self.coef_ = coef
        return self

    def predict(self, x):
        return expit(self.intercept_ + self.std(x) @ self.coef_)


class Logistic(L1Logistic):
    """Unpenalized logistic regression (maximum likelihood)."""

    def __init__(self):
        super().__init__(lam=0.0)


class L1Linear:
    def __init__(self, lambda_rule: float = 1.0, lam: Optional[float] = None, refit: bool = False):
        self.lambda_rule = lambda_rule
        self.lam = lam
        self.refit = refit

    def fit(self, x, y):
        self.std = _Standardizer().fit(x)
        n, p = x.shape
        self.ybar_ = float(np.mean(y))
        lam = self.lam
        if lam is None:
            lam = self.lambda_rule * float(np.std(y)) * np.sqrt(np.log(max(p, 2)) / n)
        self.lam_ = lam
        xs = self.std(x)
        self.coef_ = lasso_solve(LassoProblem(xs, y - self.ybar_, lam=lam)).coef
        sel = np.flatnonzero(self.coef_)
        if self.refit and 0 < sel.size < n - 1:
            coef = np.zeros(p)
            coef[sel] = np.linalg.lstsq(xs[:, sel], y - self.ybar_, rcond=None)[0]
            self.coef_ = coef
        return self

    def predict(self, x):
        return self.ybar_ + self.std(x) @ self.coef_


class OLS:
    def fit(self, x, y):
        a = np.column_stack([np.ones(x.shape[0]), x])
        self.coef_ = np.linalg.lstsq(a, y, rcond=None)[0]
        return self

    def predict(self, x):
        return self.coef_[0] + x @ self.coef_[1:]


class Constant:
    def fit(self, x, y):
        self.value_ = float(np.mean(y))
        return self

    def predict(self, x):
        return np.full(x.shape[0], self.value_)


def make_learner(spec, task: str):
    """Instantiate a learner for ``task`` in {"propensity", "outcome"}."""
    if not isinstance(spec, LearnerSpec):
        return spec
    opts = dict(spec.options)
    if spec.kind == "constant":
        return Constant()
    if task == "propensity":
        if spec.kind == "ols":
            return Logistic()
        return L1Logistic(spec.lambda_rule, lam=opts.get("lam"), refit=bool(opts.get("refit", False)))
    if spec.kind == "ols":
        return OLS()
    if spec.kind == "l1_logistic":
        raise ValueError("l1_logistic is a propensity learner")
    return L1Linear(spec.lambda_rule, lam=opts.get("lam"), refit=bool(opts.get("refit", False)))


def _predict(learner, x):
    if hasattr(learner, "predict_proba"):
        return np.asarray(learner.predict_proba(x))[:, 1]
    return np.asarray(learner.predict(x), dtype=float)


def nuisance_features(sample: Sample, degree: int = W_DEGREE) -> np.ndarray:
    """W = [X, non-constant trig basis of Z] with full-sample anchors."""
    spec = BasisSpec(degree, float(sample.z.min()), float(sample.z.max()))
    return np.column_stack([sample.x, trig_features(spec.scale(sample.z), degree)[:, 1:]])


@dataclass(frozen=True, eq=False)
class NuisanceFit:
    pi_hat: np.ndarray
    phi1_hat: np.ndarray
    phi0_hat: np.ndarray
    fold_id: np.ndarray
    epsilon_clip: float
    treated_fraction: float

    @property
    def n(self) -> int:
        return self.pi_hat.shape[0]

    def equals(self, other: "NuisanceFit") -> bool:
        return (
            self.epsilon_clip == other.epsilon_clip
            and all(np.array_equal(a, b) for a, b in zip(
                (self.pi_hat, self.phi1_hat, self.phi0_hat, self.fold_id),
                (other.pi_hat, other.phi1_hat, other.phi0_hat, other.fold_id),
            ))
        )


def stratified_folds(d: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold labels from a seeded permutation within each treatment arm."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    fold = np.empty(d.shape[0], dtype=int)
    for arm in (0.0, 1.0):
        idx = np.flatnonzero(d == arm)
        perm = rng.permutation(idx)
        fold[perm] = np.arange(perm.size) % k
    return fold


def cross_fit(
    sample: Sample,
    prop_learner=None,
    outcome_learner=None,
    k: int = 2,
    epsilon: float = 0.01,
    seed: int = 0,
    w_degree: int = W_DEGREE,
) -> NuisanceFit:
    """Out-of-fold estimates of pi, Phi_1 and Phi_0 for every row.

    Learners see W = [X, trig basis of Z of degree ``w_degree``].
    """
    prop_learner = prop_learner if prop_learner is not None else LearnerSpec("l1_logistic")
    outcome_learner = outcome_learner if outcome_learner is not None else LearnerSpec("l1_linear")
    if k < 2:
        raise ValueError("need at least 2 folds")
    n_treated = int(sample.d.sum())
    if sample.n < 4 * k or min(n_treated, sample.n - n_treated) < k:
        raise InsufficientStratum(
            f"n={sample.n}, treated={n_treated}: each arm needs >= {k} rows and n >= {4 * k}"
        )
    w = nuisance_features(sample, w_degree)
    d, dy = sample.d, sample.dy
    fold = stratified_folds(d, k, seed)
    pi = np.empty(sample.n)
    phi1 = np.empty(sample.n)
    phi0 = np.empty(sample.n)
    for f in range(k):
        test = fold == f
        train = ~test
        jobs = (
            ("propensity", train, d, pi),
            ("outcome_treated", train & (d == 1), dy, phi1),
            ("outcome_control", train & (d == 0), dy, phi0),
        )
        for which, rows, y, out in jobs:
            spec = prop_learner if which == "propensity" else outcome_learner
            try:
                learner = make_learner(spec, "propensity" if which == "propensity" else "outcome")
                learner.fit(w[rows], y[rows])
                out[test] = _predict(learner, w[test])
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise LearnerFailure(f, which, exc) from exc
    for arr in (pi, phi1, phi0):
        if not np.all(np.isfinite(arr)):
            raise LearnerFailure(-1, "prediction", ValueError("non-finite predictions"))
    return NuisanceFit(
        pi_hat=np.clip(pi, epsilon, 1 - epsilon),
        phi1_hat=phi1,
        phi0_hat=phi0,
        fold_id=fold,
        epsilon_clip=epsilon,
        treated_fraction=sample.treated_fraction,
    )


def oracle_nuisance(sample: Sample, truth: TruthInfo, epsilon: float = 0.01) -> NuisanceFit:
    """Nuisance values at the truth (simulation only)."""
    if truth.phi1 is None or truth.phi0 is None:
        raise ValueError("truth does not carry outcome regressions")
    return NuisanceFit(
        pi_hat=np.clip(truth.pi0(sample.x, sample.z), epsilon, 1 - epsilon),
        phi1_hat=np.asarray(truth.phi1(sample.x, sample.z), dtype=float),
        phi0_hat=np.asarray(truth.phi0(sample.x, sample.z), dtype=float),
        fold_id=np.zeros(sample.n, dtype=int),
        epsilon_clip=epsilon,
        treated_fraction=sample.treated_fraction,
    )


def misspecify(fit: NuisanceFit, which: str, mode: str) -> NuisanceFit:
    """Replace one nuisance block by a deliberately wrong version.

    ``constant`` sets pi to the treated fraction, or Phi_1 and Phi_0 to
    their sample means; ``wrong_scale`` multiplies the block by 1.5
    (pi is re-clipped).
    """
    if which not in ("propensity", "outcomes"):
        raise ValueError("which must be 'propensity' or 'outcomes'")
    if mode not in ("constant", "wrong_scale"):
        raise ValueError("mode must be 'constant' or 'wrong_scale'")
    eps = fit.epsilon_clip
    if which == "propensity":
        if mode == "constant":
            pi = np.full(fit.n, np.clip(fit.treated_fraction, eps, 1 - eps))
        else:
            pi = np.clip(1.5 * fit.pi_hat, eps, 1 - eps)
        return replace(fit, pi_hat=pi)
    if mode == "constant":
        return replace(
            fit,
            phi1_hat=np.full(fit.n, fit.phi1_hat.mean()),
            phi0_hat=np.full(fit.n, fit.phi0_hat.mean()),
        )
    return replace(fit, phi1_hat=1.5 * fit.phi1_hat, phi0_hat=1.5 * fit.phi0_hat)
