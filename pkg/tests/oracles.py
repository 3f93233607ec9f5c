"""Independent reference solutions used by the tests.

None of these share code with the package solvers.
"""

import itertools

import numpy as np


def lasso_objective(a, s, lam, coef, weights=None):
    w = np.ones(a.shape[1]) if weights is None else weights
    r = s - a @ coef
    return r @ r / a.shape[0] + lam * np.sum(w * np.abs(coef))


def lasso_grid_oracle(a, s, lam, weights=None, points=21, rounds=60):
    """Minimize the m-dimensional Lasso objective by repeated grid refinement.

    Start from a box around the least-squares solution and shrink it around
    the best grid point each round. Practical for m <= 3.
    """
    m = a.shape[1]
    ls = np.linalg.lstsq(a, s, rcond=None)[0]
    center = np.zeros(m)
    half = np.full(m, 2.0 * np.max(np.abs(ls)) + 1.0)
    best = center.copy()
    best_val = lasso_objective(a, s, lam, best, weights)
    offsets = np.linspace(-1.0, 1.0, points)
    grid = np.array(list(itertools.product(offsets, repeat=m)))
    for _ in range(rounds):
        cand = center + grid * half
        # snap near-zero coordinates so kinks at 0 are always examined
        cand = np.vstack([cand, np.where(np.abs(cand) < half / points, 0.0, cand)])
        r = s[None, :] - cand @ a.T
        w = np.ones(m) if weights is None else weights
        vals = (r**2).sum(1) / a.shape[0] + lam * (np.abs(cand) * w).sum(1)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best, best_val = cand[i].copy(), vals[i]
        center = best
        half = half * 0.6
    return best, best_val


def dantzig_vertex_oracle(gram, target, bound, tol=1e-9):
    """min ||w||_1 s.t. ||target + gram w||_inf <= bound, by vertex enumeration.

    The objective is linear on each orthant, so an optimum sits at a vertex
    of the arrangement of the 2m constraint hyperplanes and the m coordinate
    hyperplanes. Enumerate every m-subset, solve, keep feasible points.
    """
    m = gram.shape[0]
    rows, rhs = [], []
    for j in range(m):
        rows.append(gram[j]); rhs.append(bound - target[j])
        rows.append(gram[j]); rhs.append(-bound - target[j])
        e = np.zeros(m); e[j] = 1.0
        rows.append(e); rhs.append(0.0)
    rows, rhs = np.array(rows), np.array(rhs)
    best, best_val = None, np.inf
    for idx in itertools.combinations(range(len(rows)), m):
        A = rows[list(idx)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        w = np.linalg.solve(A, rhs[list(idx)])
        if np.max(np.abs(target + gram @ w)) <= bound + tol:
            val = np.abs(w).sum()
            if val < best_val:
                best, best_val = w, val
    return best, best_val


def joint_ols(x, psi, s):
    """Normal-equation OLS of s on [x psi]."""
    a = np.column_stack([x, psi])
    coef = np.linalg.solve(a.T @ a, a.T @ s)
    return coef[: x.shape[1]], coef[x.shape[1]:]
