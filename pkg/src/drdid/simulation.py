"""Monte Carlo designs with known truths and the replication harness.

Each replication draws from its own Philox stream keyed by (seed, rep), so
results do not depend on scheduling. Aggregation is an ordered fold over
replication index.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit
from scipy.stats import norm
from threadpoolctl import threadpool_limits

from .data import Sample, TruthInfo
from .errors import AllRepsFailed, DrDidError, Infeasible
from .estimator import fit as fit_drdid
from .estimator import fit_semidid, pseudo_outcome
from .inference import BetaDebiaser, debias_f, z_quantile
from .nuisance import LearnerSpec, cross_fit

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox(key=(seed, rep))"


@dataclass(frozen=True)
class DgpConfig:
    family: str = "dgp1"
    n: int = 500
    p: int = 50
    rho: float = 0.5
    s_beta: int = 15
    s_theta: int = 10
    seed: int = 0
    # "own": treated change is Y1(1) - Y1(0), baselines cancel;
    # "untreated": treated change is Y1(1) - Y0(0)
    baseline: str = "own"

    def __post_init__(self):
        if self.family not in ("dgp1", "dgp2"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.n < 20:
            raise ValueError("n must be at least 20")
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.baseline not in ("own", "untreated"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")

    def beta1(self) -> np.ndarray:
        b = np.zeros(self.p)
        k = min(self.s_beta, self.p)
        b[:k] = 2.0 / np.arange(1, k + 1)
        return b

    def beta0_control(self) -> np.ndarray:
        b = np.zeros(self.p)
        k = min(self.s_beta, self.p)
        b[:k] = 1.0 / np.arange(1, k + 1)
        return b

    def theta(self) -> np.ndarray:
        t = np.zeros(self.p)
        k = min(self.s_theta, self.p)
        t[:k] = 1.0 / np.arange(1, k + 1)
        return t

    def as_dict(self) -> dict:
        return asdict(self)


def rep_rng(seed: int, rep: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, rep * 4 + stream]))


def toeplitz_cov(p: int, rho: float) -> np.ndarray:
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_sample(cfg: DgpConfig, rep: int = 0, theta: Optional[np.ndarray] = None) -> tuple[Sample, TruthInfo]:
    """Draw one sample. ``theta`` overrides the propensity index coefficients."""
    if cfg.p < cfg.s_beta:
        warnings.warn(f"p={cfg.p} < {cfg.s_beta}: treatment-effect support is truncated", stacklevel=2)
    rng = rep_rng(cfg.seed, rep)
    n, p = cfg.n, cfg.p
    if cfg.family == "dgp1":
        x = rng.standard_normal((n, p))
    else:
        chol = np.linalg.cholesky(toeplitz_cov(p, cfg.rho))
        x = rng.standard_normal((n, p)) @ chol.T
    z = rng.standard_normal(n)
    eps1 = rng.standard_normal(n)
    eps0 = rng.standard_normal(n)
    if cfg.family == "dgp1":
        base1 = rng.standard_normal(n)
        base0 = rng.standard_normal(n)
    else:
        base1 = base0 = rng.standard_normal(n) * (z / np.sqrt(2) + x[:, 0] / np.sqrt(2))
    b1, b0 = cfg.beta1(), cfg.beta0_control()
    th = cfg.theta() if theta is None else np.asarray(theta, dtype=float)
    pi = expit(x @ th)
    d = (rng.random(n) < pi).astype(float)
    y1_post = base1 + x @ b1 + np.exp(z) + eps1
    y0_post = base0 + x @ b0 + eps0
    pre1 = base1 if cfg.baseline == "own" else base0
    dy = d * (y1_post - pre1) + (1 - d) * (y0_post - base0)
    truth = TruthInfo(
        beta0=b1 - b0,
        f0=np.exp,
        pi0=lambda xx, zz, th=th: expit(np.asarray(xx) @ th),
        phi1=lambda xx, zz, b=b1: np.asarray(xx) @ b + np.exp(np.asarray(zz)),
        phi0=lambda xx, zz, b=b0: np.asarray(xx) @ b,
    )
    return Sample(dy=dy, d=d, x=x, z=z), truth


def default_coordinates(p: int, s_beta: int = 15) -> list[int]:
    """0-based indices {0..s_beta-1} plus the last five coordinates."""
    coords = list(range(min(s_beta, p)))
    coords += [j for j in range(max(p - 5, 0), p) if j not in coords]
    return coords


def default_z_grid(points: int = 20, z: Optional[np.ndarray] = None) -> np.ndarray:
    """Grid over the central 90% of Z: sample quantiles if ``z`` is given,
    otherwise standard normal quantiles."""
    if z is not None:
        lo, hi = np.quantile(z, [0.05, 0.95])
    else:
        lo, hi = norm.ppf(0.05), norm.ppf(0.95)
    return np.linspace(lo, hi, points)


@dataclass
class TargetSpec:
    coordinates: Optional[list[int]] = None
    z_grid: Optional[list[float]] = None
    level: float = 0.90

    def resolve(self, p: int, s_beta: int = 15) -> tuple[list[int], np.ndarray]:
        coords = list(self.coordinates) if self.coordinates is not None else default_coordinates(p, s_beta)
        grid = np.asarray(self.z_grid, dtype=float) if self.z_grid is not None else default_z_grid()
        return coords, grid


@dataclass
class EstimatorSettings:
    degree: int = 8
    folds: int = 2
    epsilon: float = 0.01
    c_lambda: float = 1.0
    c_prime: float = 1.0
    c_dprime: float = 1.0
    w_degree: int = 3
    propensity: LearnerSpec = field(default_factory=lambda: LearnerSpec("l1_logistic"))
    # half-strength penalty plus post-selection refit keeps the outcome
    # regressions' shrinkage from compounding with the propensity's
    outcome: LearnerSpec = field(
        default_factory=lambda: LearnerSpec("l1_linear", 0.5, {"refit": True})
    )

    def as_dict(self) -> dict:
        d = asdict(self)
        d["propensity"] = self.propensity.as_dict()
        d["outcome"] = self.outcome.as_dict()
        return d


@dataclass
class RepResult:
    """Estimates, standard errors and CI bounds for one replication."""

    lin_est: np.ndarray
    lin_se: np.ndarray
    lin_lo: np.ndarray
    lin_hi: np.ndarray
    np_est: np.ndarray
    np_se: np.ndarray
    np_lo: np.ndarray
    np_hi: np.ndarray
    extra: dict = field(default_factory=dict)


def drdid_rep(sample, truth, coords, grid, level, settings: EstimatorSettings, seed: int) -> RepResult:
    nuis = cross_fit(
        sample, settings.propensity, settings.outcome,
        k=settings.folds, epsilon=settings.epsilon, seed=seed, w_degree=settings.w_degree,
    )
    pseudo = pseudo_outcome(sample, nuis)
    f = fit_drdid(sample, nuis, degree=settings.degree, c_lambda=settings.c_lambda, pseudo=pseudo)
    deb = BetaDebiaser(f, c_prime=settings.c_prime)
    lin = [deb(np.eye(sample.p)[j], level) for j in coords]
    finf = debias_f(f, sample, nuis, pseudo, grid, level=level, c_dprime=settings.c_dprime)
    return RepResult(
        lin_est=np.array([b.t_hat for b in lin]),
        lin_se=np.array([b.se for b in lin]),
        lin_lo=np.array([b.ci_low for b in lin]),
        lin_hi=np.array([b.ci_high for b in lin]),
        np_est=finf.f_bar, np_se=finf.se, np_lo=finf.ci_low, np_hi=finf.ci_high,
        extra={"lasso_beta": f.beta_hat[coords].copy(), "v_beta": np.array([b.v_beta_hat for b in lin])},
    )


def semidid_rep(sample, truth, coords, grid, level, settings: EstimatorSettings, seed: int) -> RepResult:
    f = fit_semidid(sample, degree=settings.degree, epsilon=settings.epsilon)
    q = z_quantile(level)
    est = f.beta_hat[coords]
    se = np.sqrt(np.diag(f.cov)[coords])
    fz = f.f_hat(grid)
    fse = f.f_se(grid)
    return RepResult(est, se, est - q * se, est + q * se, fz, fse, fz - q * fse, fz + q * fse)


ESTIMATORS: dict[str, Callable] = {"drdid": drdid_rep, "semidid": semidid_rep}


@dataclass
class MetricBlock:
    bias: float
    std_err: float
    mse: float
    coverage: float
    ci_length: float
    empirical_sd: float

    METRICS = ("bias", "std_err", "mse", "coverage", "ci_length")

    @classmethod
    def from_arrays(cls, est, se, lo, hi, truth) -> "MetricBlock":
        err = est - truth
        cover = (lo <= truth) & (truth <= hi)
        sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.zeros(est.shape[1])
        return cls(
            bias=float(err.mean(axis=0).mean()),
            std_err=float(se.mean(axis=0).mean()),
            mse=float((err**2).mean(axis=0).mean()),
            coverage=float(cover.mean(axis=0).mean()),
            ci_length=float((hi - lo).mean(axis=0).mean()),
            empirical_sd=float(sd.mean()),
        )

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class McReport:
    dgp: dict
    estimator: str
    reps: int
    n_failed: int
    level: float
    linear: Optional[MetricBlock]
    nonparametric: Optional[MetricBlock]
    coordinates: list
    z_grid: list
    settings: dict
    infeasible: bool = False
    rng: str = RNG_ALGORITHM
    per_rep: Optional[dict] = None

    @property
    def n(self) -> int:
        return int(self.dgp["n"])

    @property
    def p(self) -> int:
        return int(self.dgp["p"])

    def to_dict(self, include_per_rep: bool = False) -> dict:
        d = {
            "dgp": self.dgp,
            "estimator": self.estimator,
            "reps": self.reps,
            "n_failed": self.n_failed,
            "level": self.level,
            "infeasible": self.infeasible,
            "linear": None if self.linear is None else self.linear.as_dict(),
            "nonparametric": None if self.nonparametric is None else self.nonparametric.as_dict(),
            "coordinates": [int(c) + 1 for c in self.coordinates],
            "z_grid": [float(v) for v in self.z_grid],
            "settings": self.settings,
            "rng": self.rng,
        }
        if include_per_rep and self.per_rep is not None:
            d["per_rep"] = {k: np.asarray(v).tolist() for k, v in self.per_rep.items()}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _rep_seed(seed: int, rep: int) -> int:
    # cross-fitting folds get their own stream, distinct from the data stream
    return int(np.random.Philox(key=[seed, rep * 4 + 1]).random_raw() >> 1)


def _one_rep(args) -> tuple[int, Optional[RepResult], Optional[str]]:
    cfg, rep, estimator, coords, grid, level, settings = args
    fn = ESTIMATORS[estimator] if isinstance(estimator, str) else estimator
    with threadpool_limits(limits=1):
        sample, truth = gen_sample(cfg, rep) if cfg.p >= cfg.s_beta else _quiet_gen(cfg, rep)
        try:
            return rep, fn(sample, truth, coords, grid, level, settings, _rep_seed(cfg.seed, rep)), None
        except DrDidError as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"


def _quiet_gen(cfg, rep):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return gen_sample(cfg, rep)


def run_mc(
    cfg: DgpConfig,
    estimator: Union[str, Callable] = "drdid",
    reps: int = 200,
    targets: Optional[TargetSpec] = None,
    parallelism: int = 1,
    settings: Optional[EstimatorSettings] = None,
    keep_per_rep: bool = False,
) -> McReport:
    """Replicate ``estimator`` on ``cfg`` and average the table metrics.

    ``estimator`` is "drdid", "semidid" or a callable with the signature of
    :func:`drdid_rep`. Replications raising package errors are counted as
    failures and excluded.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    targets = targets or TargetSpec()
    settings = settings or EstimatorSettings()
    coords, grid = targets.resolve(cfg.p, cfg.s_beta)
    level = targets.level
    name = estimator if isinstance(estimator, str) else getattr(estimator, "__name__", "custom")
    base = dict(
        dgp=cfg.as_dict(), estimator=name, reps=reps, level=level,
        coordinates=coords, z_grid=grid.tolist(), settings=settings.as_dict(),
    )
    if estimator == "semidid" and cfg.n <= cfg.p + 2 * settings.degree + 1:
        return McReport(n_failed=0, linear=None, nonparametric=None, infeasible=True, **base)

    jobs = [(cfg, r, estimator, coords, grid, level, settings) for r in range(reps)]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_one_rep, jobs))
    else:
        results = [_one_rep(j) for j in jobs]
    results.sort(key=lambda t: t[0])
    ok = [r for _, r, _ in results if r is not None]
    failures = [(i, msg) for i, r, msg in results if r is None]
    for i, msg in failures:
        log.warning("event=rep_failed rep=%d error=%s", i, msg)
    if not ok:
        raise AllRepsFailed(f"all {reps} replications failed; first error: {failures[0][1]}")
    beta_truth = (cfg.beta1() - cfg.beta0_control())[coords]
    f_truth = np.exp(grid)

    def stack(attr):
        return np.vstack([getattr(r, attr) for r in ok])

    linear = MetricBlock.from_arrays(stack("lin_est"), stack("lin_se"), stack("lin_lo"), stack("lin_hi"), beta_truth)
    nonpar = MetricBlock.from_arrays(stack("np_est"), stack("np_se"), stack("np_lo"), stack("np_hi"), f_truth)
    per_rep = None
    if keep_per_rep:
        per_rep = {a: stack(a) for a in ("lin_est", "lin_se", "lin_lo", "lin_hi", "np_est", "np_se", "np_lo", "np_hi")}
        if ok[0].extra:
            for key in ok[0].extra:
                per_rep[key] = np.vstack([r.extra[key] for r in ok])
    return McReport(n_failed=len(failures), linear=linear, nonparametric=nonpar, per_rep=per_rep, **base)


# ---------------------------------------------------------------- tables

TABLE_FIELDS = ("family", "n", "p", "estimator", "block", "metric", "value")
METRIC_LABELS = {
    "bias": "Bias",
    "std_err": "Std Err",
    "mse": "MSE",
    "coverage": "Coverage",
    "ci_length": "CI length",
}


def table_rows(reports: Sequence[McReport]) -> list[dict]:
    rows = []
    for r in reports:
        for block in ("linear", "nonparametric"):
            mb = getattr(r, block)
            for m in MetricBlock.METRICS:
                rows.append({
                    "family": r.dgp["family"], "n": r.n, "p": r.p, "estimator": r.estimator,
                    "block": block, "metric": m,
                    "value": None if (r.infeasible or mb is None) else getattr(mb, m),
                })
    return rows


def read_table_csv(path) -> list[dict]:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        out = []
        for row in reader:
            out.append({
                "family": row["family"], "n": int(row["n"]), "p": int(row["p"]),
                "estimator": row["estimator"], "block": row["block"], "metric": row["metric"],
                "value": None if row["value"] == "-" else float(row["value"]),
            })
    return out


def format_table(rows: Sequence[dict]) -> str:
    """Aligned text table: one panel per n, columns per (p, estimator)."""
    cols = []
    for r in rows:
        key = (r["p"], r["estimator"])
        if key not in cols:
            cols.append(key)
    cols.sort(key=lambda c: (c[0], c[1] != "drdid", c[1]))
    ns = sorted({r["n"] for r in rows})
    index = {(r["n"], r["p"], r["estimator"], r["block"], r["metric"]): r["value"] for r in rows}
    label_w = 12
    cell_w = 11
    lines = [" " * label_w + "".join(f"{'p=' + str(p):>{cell_w}}" for p, _ in cols),
             " " * label_w + "".join(f"{e:>{cell_w}}" for _, e in cols)]
    for n in ns:
        lines.append(f"n={n}")
        for block in ("linear", "nonparametric"):
            lines.append(f"  {block}")
            for m in MetricBlock.METRICS:
                cells = []
                for p, e in cols:
                    v = index.get((n, p, e, block, m), "missing")
                    cells.append("" if v == "missing" else ("-" if v is None else f"{v:.4f}"))
                lines.append(f"{'  ' + METRIC_LABELS[m]:<{label_w}}" + "".join(f"{c:>{cell_w}}" for c in cells))
    return "\n".join(lines) + "\n"


def write_table(rows: Sequence[dict], path, header: Optional[dict] = None) -> tuple[str, str]:
    """Write ``<path>.csv`` and ``<path>.txt``; returns both paths."""
    import csv
    from pathlib import Path

    base = Path(path)
    if base.suffix in (".csv", ".txt"):
        base = base.with_suffix("")
    csv_path, txt_path = base.with_suffix(".csv"), base.with_suffix(".txt")
    prefix = "# " + json.dumps(header, sort_keys=True) + "\n" if header is not None else ""
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(prefix)
        w = csv.writer(fh)
        w.writerow(TABLE_FIELDS)
        for r in rows:
            w.writerow([r["family"], r["n"], r["p"], r["estimator"], r["block"], r["metric"],
                        "-" if r["value"] is None else repr(float(r["value"]))])
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(prefix)
        fh.write(format_table(rows))
    return str(csv_path), str(txt_path)


def render_table(reports: Sequence[McReport], path, header: Optional[dict] = None) -> tuple[str, str]:
    if not reports:
        raise ValueError("no reports to render")
    return write_table(table_rows(reports), path, header)
