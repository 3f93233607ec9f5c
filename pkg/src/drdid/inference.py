"""De-biased inference for linear functionals of beta and for f(z).

The linear-functional correction uses a Dantzig-type weight vector on the
sieve-residualized design; the f(z) correction re-solves the sieve score
after projecting X out of the basis with a row-wise Dantzig matrix.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import norm

from .data import Sample
from .errors import SingularSigmaF, ZeroXi
from .estimator import DrDidFit, PseudoOutcome
from .nuisance import NuisanceFit
from .sieve import eval_basis
from .solvers import DantzigProblem, dantzig_solve

log = logging.getLogger(__name__)


def z_quantile(level: float) -> float:
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    return float(norm.ppf(0.5 + level / 2))


def auto_bound(n: int, p: int, c: float = 1.0) -> float:
    return float(c * np.sqrt(np.log(max(p, 2)) / n))


@dataclass(eq=False)
class BetaInference:
    xi: np.ndarray
    t_hat: float
    w_hat: np.ndarray
    v_beta_hat: float
    ci_low: float
    ci_high: float
    level: float
    n: int
    lambda_prime: float
    escalations: int = 0

    @property
    def se(self) -> float:
        return float(np.sqrt(self.v_beta_hat / self.n))

    def at_level(self, level: float) -> "BetaInference":
        h = z_quantile(level) * self.se
        return BetaInference(
            self.xi, self.t_hat, self.w_hat, self.v_beta_hat,
            self.t_hat - h, self.t_hat + h, level, self.n, self.lambda_prime, self.escalations,
        )

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.xi)
        return {
            "xi": [[int(j), float(self.xi[j])] for j in nz],
            "t_hat": self.t_hat,
            "se": self.se,
            "v_beta_hat": self.v_beta_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "level": self.level,
            "lambda_prime": self.lambda_prime,
            "escalations": self.escalations,
            "w_hat": [[int(j), float(self.w_hat[j])] for j in np.flatnonzero(self.w_hat)],
        }


class BetaDebiaser:
    """Shares the residualized Gram matrix across several functionals."""

    def __init__(self, fit: DrDidFit, lambda_prime: Union[float, str] = "auto", c_prime: float = 1.0):
        self.fit = fit
        xt = fit.x_tilde
        self.n, self.p = xt.shape
        self.gram = xt.T @ xt / self.n
        self.score = xt.T @ fit.residuals / self.n
        self.bound = auto_bound(self.n, self.p, c_prime) if lambda_prime == "auto" else float(lambda_prime)

    def __call__(self, xi, level: float = 0.9) -> BetaInference:
        xi = np.asarray(xi, dtype=float).ravel()
        if xi.shape[0] != self.p:
            raise ValueError(f"xi has length {xi.shape[0]}, expected {self.p}")
        if not np.any(xi):
            raise ZeroXi("xi must be nonzero")
        sol = dantzig_solve(DantzigProblem(self.gram, xi, self.bound), full_output=True)
        w = sol.w
        t_hat = float(xi @ self.fit.beta_hat - w @ self.score)
        proj = self.fit.x_tilde @ w
        v = float(np.mean(proj**2 * self.fit.residuals**2))
        h = float(z_quantile(level) * np.sqrt(v / self.n))
        return BetaInference(
            xi=xi, t_hat=t_hat, w_hat=w, v_beta_hat=v, ci_low=t_hat - h, ci_high=t_hat + h,
            level=level, n=self.n, lambda_prime=sol.bound, escalations=sol.escalations,
        )


def debias_beta(
    fit: DrDidFit,
    sample: Sample,
    nuisance: Optional[NuisanceFit],
    pseudo: Optional[PseudoOutcome],
    xi,
    lambda_prime: Union[float, str] = "auto",
    level: float = 0.9,
    c_prime: float = 1.0,
) -> BetaInference:
    """De-biased estimate and CI for xi' beta.

    ``sample``, ``nuisance`` and ``pseudo`` are accepted for interface
    symmetry; everything needed is already carried by ``fit``.
    """
    return BetaDebiaser(fit, lambda_prime, c_prime)(xi, level)


@dataclass(eq=False)
class FInference:
    z_grid: np.ndarray
    f_bar: np.ndarray
    sigma_z: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    m_hat: np.ndarray
    gamma_bar: np.ndarray
    level: float
    n: int
    lambda_dprime: float
    f_hat: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)

    @property
    def se(self) -> np.ndarray:
        return self.sigma_z / np.sqrt(self.n)

    def at_level(self, level: float) -> "FInference":
        h = z_quantile(level) * self.se
        return FInference(
            self.z_grid, self.f_bar, self.sigma_z, self.f_bar - h, self.f_bar + h,
            self.m_hat, self.gamma_bar, level, self.n, self.lambda_dprime, self.f_hat, list(self.flags),
        )

    def to_dict(self) -> dict:
        return {
            "z": self.z_grid.tolist(),
            "f_bar": self.f_bar.tolist(),
            "f_hat": None if self.f_hat is None else self.f_hat.tolist(),
            "sigma_z": self.sigma_z.tolist(),
            "ci_low": self.ci_low.tolist(),
            "ci_high": self.ci_high.tolist(),
            "gamma_bar": self.gamma_bar.tolist(),
            "level": self.level,
            "n": self.n,
            "lambda_dprime": self.lambda_dprime,
            "m_hat_nonzeros": int(np.count_nonzero(self.m_hat)),
            "flags": list(self.flags),
        }


def debias_f(
    fit: DrDidFit,
    sample: Sample,
    nuisance: Optional[NuisanceFit],
    pseudo: Optional[PseudoOutcome],
    z_grid: Sequence[float],
    lambda_dprime: Union[float, str] = "auto",
    level: float = 0.9,
    c_dprime: float = 1.0,
    m_hat: Optional[np.ndarray] = None,
) -> FInference:
    """One-step de-biased sieve estimate of f on ``z_grid`` with pointwise CIs.

    ``m_hat`` overrides the Dantzig projection matrix (k_n x p), mainly for
    testing special cases such as M = 0.
    """
    x = sample.x
    psi = fit.cache.psi
    n, p = x.shape
    k = psi.shape[1]
    eps = fit.residuals
    bound = auto_bound(n, p, c_dprime) if lambda_dprime == "auto" else float(lambda_dprime)
    flags = []
    if m_hat is None:
        gram_x = x.T @ x / n
        cross = psi.T @ x / n  # row j: E_n[psi_j X']
        m_hat = np.zeros((k, p))
        for j in range(k):
            sol = dantzig_solve(DantzigProblem(gram_x, -cross[j], bound), full_output=True)
            m_hat[j] = sol.w
            if sol.escalations:
                flags.append(f"m_row_{j}_escalated_{sol.escalations}")
    m_hat = np.asarray(m_hat, dtype=float)
    xm = x @ m_hat.T  # n x k
    resid_basis = psi - xm
    sigma_f = resid_basis.T @ psi / n
    if np.linalg.cond(sigma_f) > 1e12:
        raise SingularSigmaF("Sigma_f is numerically singular")
    score = resid_basis.T @ eps / n
    gamma_bar = fit.gamma_hat - np.linalg.solve(sigma_f, score)
    e2 = eps**2
    omega = (psi * e2[:, None]).T @ psi / n - (xm * e2[:, None]).T @ xm / n
    sinv = np.linalg.inv(sigma_f)
    v_f = sinv @ omega @ sinv.T
    z_grid = np.asarray(z_grid, dtype=float).ravel()
    basis = np.atleast_2d(eval_basis(fit.basis, z_grid))
    f_bar = basis @ gamma_bar
    var_z = np.einsum("ij,jk,ik->i", basis, v_f, basis)
    if np.any(var_z < 0):
        flags.append("negative_variance_clamped")
        var_z = np.maximum(var_z, 0.0)
    sigma_z = np.sqrt(var_z)
    if np.any(sigma_z <= 0):
        flags.append("nonpositive_sigma_z")
    h = z_quantile(level) * sigma_z / np.sqrt(n)
    return FInference(
        z_grid=z_grid, f_bar=f_bar, sigma_z=sigma_z, ci_low=f_bar - h, ci_high=f_bar + h,
        m_hat=m_hat, gamma_bar=gamma_bar, level=level, n=n, lambda_dprime=bound,
        f_hat=basis @ fit.gamma_hat, flags=flags,
    )


BAND_COLUMNS = ("z", "f_bar", "ci_low", "ci_high", "sigma_z")


def ci_band_export(inf: FInference, path: Union[str, Path], header: Optional[dict] = None) -> Path:
    """Write the band as CSV; ``header`` is embedded as a leading ``#`` JSON line."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header is not None:
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(BAND_COLUMNS)
        for row in zip(inf.z_grid, inf.f_bar, inf.ci_low, inf.ci_high, inf.sigma_z):
            w.writerow([repr(float(v)) for v in row])
    return path


def read_band(path: Union[str, Path]) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(line for line in fh if not line.startswith("#")))
    head, body = rows[0], rows[1:]
    return {h: np.array([float(r[i]) for r in body]) for i, h in enumerate(head)}
