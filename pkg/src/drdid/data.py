"""Repeated cross-section DiD samples, CSV ingestion and overlap diagnostics."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateTreatment,
    DimensionMismatch,
    MissingColumn,
    NonFiniteValue,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Sample:
    """One repeated cross-section: outcome change, treatment, covariates.

    Arrays are copied to float64 and frozen on construction.
    """

    dy: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        dy = np.asarray(self.dy, dtype=float).ravel()
        d = np.asarray(self.d, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float).ravel()
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DimensionMismatch("x must be a 2-d matrix")
        n = dy.shape[0]
        if not (d.shape[0] == x.shape[0] == z.shape[0] == n):
            raise DimensionMismatch(
                f"row counts differ: dy={n}, d={d.shape[0]}, x={x.shape[0]}, z={z.shape[0]}"
            )
        if n < 4:
            raise DataError(f"need at least 4 rows, got {n}")
        if x.shape[1] < 1:
            raise DataError("x needs at least one column")
        for name, arr in (("dy", dy), ("d", d), ("x", x), ("z", z)):
            bad = ~np.isfinite(arr)
            if bad.any():
                idx = np.argwhere(bad)[0]
                raise NonFiniteValue(int(idx[0]), name)
        if not np.all((d == 0) | (d == 1)):
            raise DataError("d must be 0/1")
        if d.min() == d.max():
            raise DegenerateTreatment(f"treatment is constant ({int(d[0])}) in all rows")
        object.__setattr__(self, "dy", _frozen(dy))
        object.__setattr__(self, "d", _frozen(d))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "z", _frozen(z))

    @property
    def n(self) -> int:
        return self.dy.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def treated_fraction(self) -> float:
        return float(self.d.mean())

    def subset(self, rows) -> "Sample":
        return Sample(self.dy[rows], self.d[rows], self.x[rows], self.z[rows])

    def metadata(self) -> dict:
        return {"n": self.n, "p": self.p, "treated_fraction": self.treated_fraction}

    def equals(self, other: "Sample") -> bool:
        """Bitwise equality of all four arrays."""
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip(
                (self.dy, self.d, self.x, self.z), (other.dy, other.d, other.x, other.z)
            )
        )


@dataclass(frozen=True)
class TruthInfo:
    """Known truths of a simulated sample."""

    beta0: np.ndarray
    f0: Callable[[np.ndarray], np.ndarray]
    pi0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi1: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    phi0: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def att(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.beta0 + self.f0(np.asarray(z))


@dataclass(frozen=True)
class OverlapDiagnostics:
    min_pi_hat: float
    max_pi_hat: float
    n_clipped: int
    treated_fraction: float

    def as_dict(self) -> dict:
        return {
            "min_pi_hat": self.min_pi_hat,
            "max_pi_hat": self.max_pi_hat,
            "n_clipped": self.n_clipped,
            "treated_fraction": self.treated_fraction,
        }


def validate_overlap(
    pi_hat: np.ndarray, epsilon: float = 0.01, d: Optional[np.ndarray] = None
) -> OverlapDiagnostics:
    """Summarize propensity overlap after clipping into [epsilon, 1 - epsilon].

    ``treated_fraction`` is the share of treated rows when ``d`` is given,
    otherwise the mean clipped propensity.
    """
    if not 0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 0.5)")
    pi_hat = np.asarray(pi_hat, dtype=float)
    clipped = np.clip(pi_hat, epsilon, 1 - epsilon)
    n_clipped = int(np.count_nonzero((pi_hat < epsilon) | (pi_hat > 1 - epsilon)))
    tf = float(np.mean(d)) if d is not None else float(clipped.mean())
    return OverlapDiagnostics(
        min_pi_hat=float(clipped.min()),
        max_pi_hat=float(clipped.max()),
        n_clipped=n_clipped,
        treated_fraction=tf,
    )


@dataclass
class CsvSchema:
    """Column mapping for :func:`load_csv`.

    ``x`` is either an explicit list of column names or a prefix string;
    a prefix selects every header starting with it, in file order. Supply
    either ``dy`` or both ``y_post`` and ``y_pre``.
    """

    d: str = "d"
    z: str = "z"
    x: Sequence[str] | str = "x"
    dy: Optional[str] = "dy"
    y_post: Optional[str] = None
    y_pre: Optional[str] = None

    def __post_init__(self):
        if self.y_post is not None or self.y_pre is not None:
            if self.y_post is None or self.y_pre is None:
                raise ValueError("y_post and y_pre must be given together")
            self.dy = None
        elif self.dy is None:
            raise ValueError("schema needs dy or (y_post, y_pre)")

    def x_columns(self, header: Sequence[str]) -> list[str]:
        if isinstance(self.x, str):
            reserved = {self.d, self.z, self.dy, self.y_post, self.y_pre}
            pat = re.compile(re.escape(self.x) + r".*")
            cols = [h for h in header if pat.fullmatch(h) and h not in reserved]
            if not cols:
                raise MissingColumn(self.x + "*")
            return cols
        return list(self.x)

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "z": self.z,
            "x": self.x if isinstance(self.x, str) else list(self.x),
            "dy": self.dy,
            "y_post": self.y_post,
            "y_pre": self.y_pre,
        }


def _parse(value: str, row: int, col: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise NonFiniteValue(row, col, value) from None
    if not math.isfinite(v):
        raise NonFiniteValue(row, col, value)
    return v


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> Sample:
    """Read a wide CSV (header required, UTF-8, '.' decimals) into a Sample.

    Row numbers in errors are 0-based data rows. Lines starting with ``#``
    are skipped.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        xcols = schema.x_columns(header)
        needed = [schema.d, schema.z, *xcols]
        needed += [schema.dy] if schema.dy is not None else [schema.y_post, schema.y_pre]
        pos = {h: i for i, h in enumerate(header)}
        for c in needed:
            if c not in pos:
                raise MissingColumn(c)
        rows = [r for r in reader if r]

    def column(name: str) -> np.ndarray:
        j = pos[name]
        return np.array([_parse(r[j], i, name) for i, r in enumerate(rows)], dtype=float)

    d = column(schema.d)
    if d.size and not np.all((d == 0) | (d == 1)):
        bad = int(np.flatnonzero((d != 0) & (d != 1))[0])
        raise DataError(f"row {bad}: treatment column {schema.d!r} must be 0 or 1")
    if d.size and d.min() == d.max():
        raise DegenerateTreatment(f"column {schema.d!r} is all {int(d[0])}")
    if schema.dy is not None:
        dy = column(schema.dy)
    else:
        dy = column(schema.y_post) - column(schema.y_pre)
    x = np.column_stack([column(c) for c in xcols]) if rows else np.empty((0, len(xcols)))
    return Sample(dy=dy, d=d, x=x, z=column(schema.z))


def write_csv(sample: Sample, path: str | Path, x_names: Sequence[str] | None = None) -> None:
    """Write ``sample`` with columns d, dy, z, x1..xp using round-trip float repr."""
    x_names = list(x_names) if x_names is not None else [f"x{j + 1}" for j in range(sample.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["d", "dy", "z", *x_names])
        for i in range(sample.n):
            w.writerow(
                [repr(int(sample.d[i])), repr(float(sample.dy[i])), repr(float(sample.z[i]))]
                + [repr(float(v)) for v in sample.x[i]]
            )
