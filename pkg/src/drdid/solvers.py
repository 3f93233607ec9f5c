"""Penalized least squares and l1-minimization kernels.

``lasso_solve`` is cyclic coordinate descent with covariance updates and
an active-set inner loop. ``dantzig_solve`` poses min ||w||_1 subject to
||target + gram @ w||_inf <= bound as a linear program over the split
w = w_plus - w_minus.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible

log = logging.getLogger(__name__)


@dataclass
class LassoProblem:
    """Minimize (1/n)||s - a coef||^2 + lam * sum_j penalty_weights[j] |coef_j|."""

    a: np.ndarray
    s: np.ndarray
    penalty_weights: Optional[np.ndarray] = None
    lam: float = 0.0
    tol: float = 1e-8
    max_iter: int = 100_000

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        if self.a.ndim == 1:
            self.a = self.a[:, None]
        self.s = np.asarray(self.s, dtype=float).ravel()
        m = self.a.shape[1]
        if self.penalty_weights is None:
            self.penalty_weights = np.ones(m)
        self.penalty_weights = np.asarray(self.penalty_weights, dtype=float).ravel()
        if self.a.shape[0] != self.s.shape[0]:
            raise ValueError("a and s disagree on the number of rows")
        if self.penalty_weights.shape[0] != m:
            raise ValueError("penalty_weights must have one entry per column")
        if not np.all(np.isfinite(self.penalty_weights)) or np.any(self.penalty_weights < 0):
            raise ValueError("penalty_weights must be finite and non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def objective(self, coef: np.ndarray) -> float:
        resid = self.s - self.a @ coef
        return float(resid @ resid / self.n + self.lam * np.sum(self.penalty_weights * np.abs(coef)))


class LassoResult(NamedTuple):
    coef: np.ndarray
    iterations: int
    converged: bool


def cd_gram(
    gram: np.ndarray,
    q: np.ndarray,
    thresholds: np.ndarray,
    coef: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> LassoResult:
    """Coordinate descent on c'Gc - 2q'c + 2 sum_j thresholds[j] |c_j|.

    ``coef`` is the warm start and is updated in place. Coordinates with a
    zero diagonal stay at their starting value.
    """
    m = q.shape[0]
    diag = np.diag(gram).tolist()
    thr = np.asarray(thresholds, dtype=float).tolist()
    r = q - gram @ coef
    full = list(range(m))
    idx = full
    active_only = False
    it = 0
    while it < max_iter:
        it += 1
        maxd = 0.0
        for j in idx:
            gjj = diag[j]
            if gjj <= 0.0:
                continue
            cj = coef[j]
            zj = r[j] + gjj * cj
            t = thr[j]
            if zj > t:
                new = (zj - t) / gjj
            elif zj < -t:
                new = (zj + t) / gjj
            else:
                new = 0.0
            if new != cj:
                delta = new - cj
                r -= delta * gram[j]
                coef[j] = new
                if abs(delta) > maxd:
                    maxd = abs(delta)
        if callback is not None:
            callback(coef)
        if maxd < tol:
            if not active_only:
                return LassoResult(coef, it, True)
            active_only, idx = False, full
        elif not active_only:
            active_only = True
            idx = np.flatnonzero(coef).tolist()
    return LassoResult(coef, it, False)


def lasso_solve(
    problem: LassoProblem,
    coef0: Optional[np.ndarray] = None,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> LassoResult:
    """Solve ``problem``; returns the best iterate with ``converged=False`` if
    ``max_iter`` sweeps are exhausted."""
    a, n = problem.a, problem.n
    gram = a.T @ a / n
    q = a.T @ problem.s / n
    coef = np.zeros(a.shape[1]) if coef0 is None else np.array(coef0, dtype=float)
    res = cd_gram(
        gram, q, problem.lam * problem.penalty_weights / 2.0, coef,
        tol=problem.tol, max_iter=problem.max_iter, callback=callback,
    )
    if not res.converged:
        log.warning("lasso did not converge in %d sweeps", res.iterations)
    return res


def lasso_path(problem: LassoProblem, lams) -> list[np.ndarray]:
    """Warm-started solutions along ``lams`` (solved in the given order)."""
    a, n = problem.a, problem.n
    gram = a.T @ a / n
    q = a.T @ problem.s / n
    coef = np.zeros(a.shape[1])
    out = []
    for lam in lams:
        cd_gram(gram, q, lam * problem.penalty_weights / 2.0, coef,
                tol=problem.tol, max_iter=problem.max_iter)
        out.append(coef.copy())
    return out


def lasso_kkt_violation(problem: LassoProblem, coef: np.ndarray) -> float:
    """Largest violation of the Lasso optimality conditions at ``coef``."""
    grad = 2.0 / problem.n * problem.a.T @ (problem.s - problem.a @ coef)
    bound = problem.lam * problem.penalty_weights
    zero = coef == 0
    viol = np.where(
        zero,
        np.maximum(np.abs(grad) - bound, 0.0),
        np.abs(grad - bound * np.sign(coef)),
    )
    return float(viol.max()) if viol.size else 0.0


@dataclass
class DantzigProblem:
    """min ||w||_1 subject to ||target + gram @ w||_inf <= bound."""

    gram: np.ndarray
    target: np.ndarray
    bound: float

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.target = np.asarray(self.target, dtype=float).ravel()
        m = self.target.shape[0]
        if self.gram.shape != (m, m):
            raise ValueError("gram must be m x m with m = len(target)")
        scale = max(1.0, float(np.abs(self.gram).max(initial=0.0)))
        if not np.allclose(self.gram, self.gram.T, rtol=0.0, atol=1e-10 * scale):
            raise ValueError("gram must be symmetric")
        if not self.bound > 0:
            raise ValueError("bound must be positive")

    def violation(self, w: np.ndarray) -> float:
        return float(np.abs(self.target + self.gram @ w).max())


class DantzigSolution(NamedTuple):
    w: np.ndarray
    bound: float
    escalations: int


# solve slightly inside the constraint so the LP's own feasibility slack
# cannot push the returned point outside bound * (1 + 1e-8)
_SHRINK = 1e-7
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _full_lp(gram: np.ndarray, target: np.ndarray, bound: float) -> Optional[np.ndarray]:
    m = target.shape[0]
    b = bound * (1.0 - _SHRINK)
    a_ub = np.block([[gram, -gram], [-gram, gram]])
    b_ub = np.concatenate([b - target, b + target])
    res = linprog(
        np.ones(2 * m), A_ub=a_ub, b_ub=b_ub, bounds=(0, None),
        method="highs", options=_HIGHS,
    )
    if res.status != 0:
        if res.status != 2:
            log.warning("dantzig LP status %d: %s", res.status, res.message)
        return None
    return res.x[:m] - res.x[m:]


_BIG_M = 1e6


def _generated_lp(
    gram: np.ndarray, target: np.ndarray, bound: float, batch: int = 10, max_rounds: int = 60
) -> tuple[Optional[np.ndarray], str]:
    """Row/column generation over the split LP.

    Rows carry elastic slacks priced at ``_BIG_M`` so every restricted
    problem is feasible. Once no row is violated and no column prices out,
    the point is optimal for the elastic LP over all rows and columns; a
    positive slack there means the constraint set is empty (or needs duals
    larger than ``_BIG_M``, which is treated the same). Returns
    ``(w, status)`` with status "optimal", "infeasible" or "undecided".
    """
    m = target.shape[0]
    b = bound * (1.0 - _SHRINK)
    order = np.argsort(-np.abs(target), kind="stable")
    rows = list(order[: min(batch, m)])
    cols = list(rows)
    in_rows = np.zeros(m, bool)
    in_rows[rows] = True
    in_cols = in_rows.copy()
    for _ in range(max_rounds):
        ri, ci = np.array(rows), np.array(cols)
        k, c = ri.size, ci.size
        gs = gram[np.ix_(ri, ci)]
        eye = np.eye(k)
        zero = np.zeros((k, k))
        a_ub = np.block([[gs, -gs, -eye, zero], [-gs, gs, zero, -eye]])
        b_ub = np.concatenate([b - target[ri], b + target[ri]])
        cost = np.concatenate([np.ones(2 * c), np.full(2 * k, _BIG_M)])
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs", options=_HIGHS)
        if res.status != 0:
            return None, "undecided"
        w = np.zeros(m)
        w[ci] = res.x[:c] - res.x[c : 2 * c]
        slack = res.x[2 * c :].max(initial=0.0)
        y = res.ineqlin.marginals
        eta = y[:k] - y[k:]
        lhs = target + gram[:, ci] @ w[ci]
        row_viol = np.abs(lhs) - b
        rc_viol = np.abs(gram[ri].T @ eta) - 1.0
        grow = max(batch, k // 2)
        new_rows = [i for i in np.argsort(-row_viol, kind="stable")[:grow]
                    if row_viol[i] > 1e-12 * max(1.0, b) and not in_rows[i]]
        new_cols = [j for j in np.argsort(-rc_viol, kind="stable")[:grow]
                    if rc_viol[j] > 1e-9 and not in_cols[j]]
        if not new_rows and not new_cols:
            if slack > 1e-9 * max(1.0, b):
                return None, "infeasible"
            return w, "optimal"
        for i in new_rows:
            in_rows[i] = True
            rows.append(i)
        for j in new_cols:
            in_cols[j] = True
            cols.append(j)
    return None, "undecided"


def _dantzig_lp(gram: np.ndarray, target: np.ndarray, bound: float) -> Optional[np.ndarray]:
    m = target.shape[0]
    if np.abs(target).max() <= bound:
        return np.zeros(m)
    w = None
    if m > 40:
        w, status = _generated_lp(gram, target, bound)
        if status == "infeasible":
            return None
    if w is None:
        w = _full_lp(gram, target, bound)
        if w is None:
            return None
    if np.abs(target + gram @ w).max() > bound * (1.0 + 1e-8):
        return None
    return w


def violation_lower_bound(gram: np.ndarray, target: np.ndarray) -> float:
    """Lower bound on min_w ||target + gram @ w||_inf.

    Any y orthogonal to range(gram) with ||y||_1 <= 1 gives
    y'target <= ||target + gram @ w||_inf for every w; y is taken along the
    null-space component of ``target``.
    """
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > 1e-10 * max(evals[-1], 1e-300)
    vr = evecs[:, keep]
    t_null = target - vr @ (vr.T @ target)
    l1 = np.abs(t_null).sum()
    if l1 <= 1e-12 * max(1.0, np.abs(target).sum()):
        return 0.0
    return float(t_null @ target / l1)


def dantzig_solve(
    problem: DantzigProblem,
    full_output: bool = False,
    max_escalations: int = 10,
    factor: float = 1.5,
):
    """Minimal-l1 point of the l_inf-constrained set.

    If the constraint set is empty the bound is multiplied by ``factor``
    up to ``max_escalations`` times (with a warning) before raising
    :class:`Infeasible`. With ``full_output`` a :class:`DantzigSolution`
    carrying the effective bound is returned instead of ``w``.
    """
    bound = float(problem.bound)
    floor = None
    for k in range(max_escalations + 1):
        if floor is None or bound > floor:
            w = _dantzig_lp(problem.gram, problem.target, bound)
            if w is not None:
                if k:
                    log.warning("dantzig bound escalated %d times to %.6g", k, bound)
                return DantzigSolution(w, bound, k) if full_output else w
            if floor is None:
                floor = violation_lower_bound(problem.gram, problem.target)
        bound *= factor
    raise Infeasible(
        f"no feasible point after {max_escalations} escalations (last bound {bound / factor:.6g})"
    )
