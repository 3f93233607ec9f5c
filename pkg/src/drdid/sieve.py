"""Trigonometric sieve basis and projection onto its span."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import BasisTooLarge, DegenerateZ

SQRT2 = np.sqrt(2.0)
RANK_TOL = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """Degree ``J`` trigonometric basis on z rescaled by the anchors ``z_min``, ``z_max``."""

    degree: int
    z_min: float
    z_max: float

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be a positive integer")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be below z_max")

    @property
    def k_n(self) -> int:
        return 2 * self.degree + 1

    def scale(self, z) -> np.ndarray:
        zt = (np.asarray(z, dtype=float) - self.z_min) / (self.z_max - self.z_min)
        return np.clip(zt, 0.0, 1.0)

    def as_dict(self) -> dict:
        return {"degree": self.degree, "k_n": self.k_n, "z_min": self.z_min, "z_max": self.z_max}


def trig_features(zt: np.ndarray, degree: int) -> np.ndarray:
    """Columns 1, sqrt2 cos(2 pi j t), sqrt2 sin(2 pi j t) for j = 1..degree."""
    zt = np.atleast_1d(np.asarray(zt, dtype=float))
    out = np.empty((zt.shape[0], 2 * degree + 1))
    out[:, 0] = 1.0
    j = np.arange(1, degree + 1)
    arg = 2.0 * np.pi * zt[:, None] * j[None, :]
    out[:, 1::2] = SQRT2 * np.cos(arg)
    out[:, 2::2] = SQRT2 * np.sin(arg)
    return out


def build_basis(z: np.ndarray, degree: int) -> tuple[BasisSpec, np.ndarray]:
    z = np.asarray(z, dtype=float).ravel()
    z_min, z_max = float(z.min()), float(z.max())
    if z_min == z_max:
        raise DegenerateZ("all z values are equal")
    spec = BasisSpec(degree, z_min, z_max)
    if spec.k_n >= z.shape[0]:
        raise BasisTooLarge(f"k_n={spec.k_n} needs more than {z.shape[0]} rows")
    return spec, trig_features(spec.scale(z), degree)


def eval_basis(spec: BasisSpec, z0) -> np.ndarray:
    """Basis at ``z0``; scalars give a vector, arrays a matrix. Out-of-range z is clamped."""
    out = trig_features(spec.scale(z0), spec.degree)
    return out[0] if np.ndim(z0) == 0 else out


@dataclass(frozen=True, eq=False)
class ProjectionCache:
    """Orthonormal basis for the numerically independent columns of ``psi``."""

    psi: np.ndarray
    q: np.ndarray
    r: np.ndarray
    retained: np.ndarray
    dropped_columns: tuple[int, ...]

    @classmethod
    def from_basis(cls, psi: np.ndarray) -> "ProjectionCache":
        psi = np.array(psi, dtype=float, copy=True)
        _, rp, piv = scipy.linalg.qr(psi, mode="economic", pivoting=True)
        diag = np.abs(np.diag(rp))
        rank = int(np.count_nonzero(diag > RANK_TOL * diag[0])) if diag.size else 0
        retained = np.sort(piv[:rank])
        # pivoted diagonal is only a proxy; confirm with singular values
        while retained.size:
            sv = np.linalg.svd(psi[:, retained], compute_uv=False)
            if sv[-1] > RANK_TOL * sv[0]:
                break
            retained = np.sort(piv[: retained.size - 1])
        q, r = np.linalg.qr(psi[:, retained])
        dropped = tuple(sorted(set(range(psi.shape[1])) - set(retained.tolist())))
        for a in (psi, q, r, retained):
            a.setflags(write=False)
        return cls(psi=psi, q=q, r=r, retained=retained, dropped_columns=dropped)

    @property
    def n(self) -> int:
        return self.psi.shape[0]

    def project(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(v, dtype=float)
        proj = self.q @ (self.q.T @ v)
        return proj, v - proj

    def lstsq(self, v: np.ndarray) -> np.ndarray:
        """Least-squares coefficients of ``v`` on psi; dropped columns get 0."""
        v = np.asarray(v, dtype=float)
        sol = scipy.linalg.solve_triangular(self.r, self.q.T @ v)
        coef = np.zeros((self.psi.shape[1],) + v.shape[1:])
        coef[self.retained] = sol
        return coef


def project(cache: ProjectionCache, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(P_Z v, v - P_Z v)`` for the span cached in ``cache``."""
    return cache.project(v)
