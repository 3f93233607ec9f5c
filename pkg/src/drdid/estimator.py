"""Doubly robust pseudo-outcome, second-stage partially linear Lasso, and
the unpenalized inverse-probability-weighted (Semi-DiD) baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.stats import norm

from .data import Sample
from .errors import DimensionMismatch, Infeasible, SingularDesign
from .nuisance import NuisanceFit, fit_l1_logistic
from .sieve import BasisSpec, ProjectionCache, build_basis, eval_basis
from .solvers import LassoProblem, lasso_solve, lasso_path

DEFAULT_DEGREE = 8


@dataclass(frozen=True, eq=False)
class PseudoOutcome:
    s_hat: np.ndarray
    rho_hat: np.ndarray


def pseudo_outcome(sample: Sample, nuisance: NuisanceFit) -> PseudoOutcome:
    if nuisance.n != sample.n:
        raise DimensionMismatch("nuisance fit and sample differ in length")
    pi = nuisance.pi_hat
    rho = np.where(sample.d == 1, 1.0 / pi, -1.0 / (1.0 - pi))
    s = rho * (sample.dy - (1.0 - pi) * nuisance.phi1_hat - pi * nuisance.phi0_hat)
    return PseudoOutcome(s_hat=s, rho_hat=rho)


@dataclass(eq=False)
class DrDidFit:
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    basis: BasisSpec
    lam: float
    residuals: np.ndarray
    cache: ProjectionCache = field(repr=False)
    x_tilde: np.ndarray = field(repr=False)
    converged: bool = True
    config: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]

    def f_hat(self, z) -> np.ndarray:
        return eval_basis(self.basis, z) @ self.gamma_hat

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.beta_hat)
        return {
            "beta_hat": [[int(j), float(self.beta_hat[j])] for j in nz],
            "p": self.p,
            "gamma_hat": self.gamma_hat.tolist(),
            "basis": self.basis.as_dict(),
            "lambda": self.lam,
            "converged": self.converged,
            "dropped_basis_columns": list(self.cache.dropped_columns),
            "residual_rms": float(np.sqrt(np.mean(self.residuals**2))),
            "config": self.config,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def auto_lambda(s_hat: np.ndarray, n: int, p: int, c_lambda: float = 1.0) -> float:
    return float(c_lambda * np.std(s_hat) * np.sqrt(np.log(max(p, 2)) / n))


def _validated_lambda(x_t, s_t, base: float, grid, seed: int) -> float:
    """Pick a multiple of ``base`` by a single seeded half split."""
    n = x_t.shape[0]
    rng = np.random.Generator(np.random.Philox(key=seed))
    idx = rng.permutation(n)
    tr, va = idx[: n // 2], idx[n // 2 :]
    lams = sorted((c * base for c in grid), reverse=True)
    coefs = lasso_path(LassoProblem(x_t[tr], s_t[tr]), lams)
    errs = [np.mean((s_t[va] - x_t[va] @ c) ** 2) for c in coefs]
    return float(lams[int(np.argmin(errs))])


def fit(
    sample: Sample,
    nuisance: NuisanceFit,
    degree: int = DEFAULT_DEGREE,
    lam: Union[float, str] = "auto",
    c_lambda: float = 1.0,
    pseudo: Optional[PseudoOutcome] = None,
    lambda_grid=(0.25, 0.5, 1.0, 2.0, 4.0),
    seed: int = 0,
) -> DrDidFit:
    """Partially linear Lasso of the pseudo-outcome on X and the sieve of Z.

    The sieve block is profiled out: the pseudo-outcome and X are
    residualized on the basis, the Lasso runs on the residuals, and the
    sieve coefficients are the least-squares fit of the remaining signal.
    ``lam`` may be a number, ``"auto"`` (c_lambda * sd(S) * sqrt(log p / n))
    or ``"validate"`` (the auto value rescaled by the best entry of
    ``lambda_grid`` on a half-split).
    """
    pseudo = pseudo if pseudo is not None else pseudo_outcome(sample, nuisance)
    s = pseudo.s_hat
    spec, psi = build_basis(sample.z, degree)
    cache = ProjectionCache.from_basis(psi)
    _, s_t = cache.project(s)
    _, x_t = cache.project(sample.x)
    n, p = sample.n, sample.p
    if lam == "auto":
        lam_val = auto_lambda(s, n, p, c_lambda)
    elif lam == "validate":
        lam_val = _validated_lambda(x_t, s_t, auto_lambda(s, n, p, c_lambda), lambda_grid, seed)
    else:
        lam_val = float(lam)
    res = lasso_solve(LassoProblem(x_t, s_t, lam=lam_val))
    beta = res.coef
    gamma = cache.lstsq(s - sample.x @ beta)
    resid = s - sample.x @ beta - psi @ gamma
    return DrDidFit(
        beta_hat=beta,
        gamma_hat=gamma,
        basis=spec,
        lam=lam_val,
        residuals=resid,
        cache=cache,
        x_tilde=x_t,
        converged=res.converged,
        config={"degree": degree, "lambda": lam if isinstance(lam, str) else float(lam),
                "c_lambda": c_lambda},
    )


def predict_att(fit: DrDidFit, x0, z0) -> float:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape[0] != fit.p:
        raise DimensionMismatch(f"x0 has length {x0.shape[0]}, expected {fit.p}")
    return float(x0 @ fit.beta_hat + eval_basis(fit.basis, float(z0)) @ fit.gamma_hat)


@dataclass(eq=False)
class SemiDidFit:
    """Unpenalized IPW partially linear fit with HC0 sandwich covariance."""

    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    basis: BasisSpec
    cov: np.ndarray
    residuals: np.ndarray
    pi_hat: np.ndarray

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]

    def beta_se(self, j: int) -> float:
        return float(np.sqrt(self.cov[j, j]))

    def f_hat(self, z) -> np.ndarray:
        return eval_basis(self.basis, z) @ self.gamma_hat

    def f_se(self, z) -> np.ndarray:
        psi = np.atleast_2d(eval_basis(self.basis, z))
        cg = self.cov[self.p :, self.p :]
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", psi, cg, psi), 0.0))

    def beta_ci(self, j: int, level: float = 0.9) -> tuple[float, float]:
        h = norm.ppf(0.5 + level / 2) * self.beta_se(j)
        return self.beta_hat[j] - h, self.beta_hat[j] + h


def fit_semidid(sample: Sample, degree: int = DEFAULT_DEGREE, epsilon: float = 0.01) -> SemiDidFit:
    """IPW pseudo-outcome rho * dy regressed by OLS on [X, sieve(Z)].

    The propensity is a full-sample unpenalized logistic regression on X,
    clipped to [epsilon, 1 - epsilon].
    """
    spec, psi = build_basis(sample.z, degree)
    n, p = sample.n, sample.p
    if n <= p + spec.k_n:
        raise Infeasible(f"semi-DiD needs n > p + k_n ({n} <= {p} + {spec.k_n})")
    coef, b0 = fit_l1_logistic(sample.x, sample.d, 0.0)
    pi = np.clip(1.0 / (1.0 + np.exp(-(b0 + sample.x @ coef))), epsilon, 1 - epsilon)
    rho = np.where(sample.d == 1, 1.0 / pi, -1.0 / (1.0 - pi))
    s = rho * sample.dy
    a = np.column_stack([sample.x, psi])
    q, r = np.linalg.qr(a)
    rdiag = np.abs(np.diag(r))
    if rdiag.min() <= 1e-10 * rdiag.max():
        raise SingularDesign("design [X, basis] is rank deficient")
    theta = np.linalg.solve(r, q.T @ s)
    resid = s - a @ theta
    rinv = np.linalg.inv(r)
    bread = rinv @ rinv.T  # (A'A)^{-1}
    meat = (a * resid[:, None] ** 2).T @ a
    cov = bread @ meat @ bread
    return SemiDidFit(
        beta_hat=theta[:p], gamma_hat=theta[p:], basis=spec, cov=cov,
        residuals=resid, pi_hat=pi,
    )
