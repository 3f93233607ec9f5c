"""Run configuration: TOML file -> validated dataclasses.

Layout (every section optional, defaults shown in the dataclasses)::

    [run]        seed, threads, out
    [data]       path, d, z, x, dy, y_post, y_pre
    [dgp]        family, rho, s_beta, s_theta, baseline
    [simulate]   n, p, estimators, reps   (n, p, estimators may be lists)
    [estimator]  degree, folds, epsilon, c_lambda, c_prime, c_dprime, w_degree, lambda
    [learners.propensity] / [learners.outcome]   kind, lambda_rule, options
    [targets]    coordinates (1-based), functionals, z_grid, z_points, level, band_levels
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Union

from .errors import ConfigError
from .nuisance import KINDS, LearnerSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


@dataclass
class RunSection:
    seed: int = 0
    threads: int = 1
    out: str = "out"


@dataclass
class DataSection:
    path: Optional[str] = None
    d: str = "d"
    z: str = "z"
    x: Union[str, list] = "x"
    dy: Optional[str] = "dy"
    y_post: Optional[str] = None
    y_pre: Optional[str] = None


@dataclass
class DgpSection:
    family: str = "dgp1"
    rho: float = 0.5
    s_beta: int = 15
    s_theta: int = 10
    baseline: str = "own"


@dataclass
class SimulateSection:
    n: list = field(default_factory=lambda: [500])
    p: list = field(default_factory=lambda: [50])
    estimators: list = field(default_factory=lambda: ["drdid"])
    reps: int = 200


@dataclass
class EstimatorSection:
    degree: int = 8
    folds: int = 2
    epsilon: float = 0.01
    c_lambda: float = 1.0
    c_prime: float = 1.0
    c_dprime: float = 1.0
    w_degree: int = 3
    # "auto", "validate" or a positive number
    lam: Union[str, float] = "auto"


@dataclass
class LearnerSection:
    kind: str
    lambda_rule: float = 1.0
    options: dict = field(default_factory=dict)

    def spec(self) -> LearnerSpec:
        return LearnerSpec(self.kind, self.lambda_rule, dict(self.options))


@dataclass
class TargetsSection:
    coordinates: Optional[list] = None
    functionals: list = field(default_factory=list)
    z_grid: Optional[list] = None
    z_points: int = 20
    level: float = 0.90
    band_levels: list = field(default_factory=list)


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    dgp: DgpSection = field(default_factory=DgpSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    propensity: LearnerSection = field(default_factory=lambda: LearnerSection("l1_logistic"))
    outcome: LearnerSection = field(
        default_factory=lambda: LearnerSection("l1_linear", 0.5, {"refit": True})
    )
    targets: TargetsSection = field(default_factory=TargetsSection)
    source: Optional[str] = None

    def as_dict(self) -> dict:
        """Effective settings that can change results.

        ``run.threads`` and ``run.out`` only affect execution, so they are
        left out; outputs then do not depend on where or how wide a run was.
        """
        d = asdict(self)
        d.pop("source")
        d["run"] = {"seed": self.run.seed}
        d["learners"] = {"propensity": d.pop("propensity"), "outcome": d.pop("outcome")}
        d["estimator"]["lambda"] = d["estimator"].pop("lam")
        return d

    def validate(self, need_data: bool = False) -> "RunConfig":
        _validate(self, need_data)
        return self


def _section(cls, raw: Any, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    raw = dict(raw)
    if cls is EstimatorSection and "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def from_dict(raw: dict, source: Optional[str] = None) -> RunConfig:
    allowed = {"run", "data", "dgp", "simulate", "estimator", "learners", "targets"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    learners = raw.get("learners") or {}
    if not isinstance(learners, dict) or set(learners) - {"propensity", "outcome"}:
        raise ConfigError("[learners] may only contain 'propensity' and 'outcome'")
    default = RunConfig()
    prop = learners.get("propensity")
    outc = learners.get("outcome")
    cfg = RunConfig(
        run=_section(RunSection, raw.get("run"), "run"),
        data=_section(DataSection, raw.get("data"), "data"),
        dgp=_section(DgpSection, raw.get("dgp"), "dgp"),
        simulate=_section(SimulateSection, raw.get("simulate"), "simulate"),
        estimator=_section(EstimatorSection, raw.get("estimator"), "estimator"),
        propensity=default.propensity if prop is None else _section(LearnerSection, prop, "learners.propensity"),
        outcome=default.outcome if outc is None else _section(LearnerSection, outc, "learners.outcome"),
        targets=_section(TargetsSection, raw.get("targets"), "targets"),
        source=source,
    )
    s = cfg.simulate
    s.n, s.p, s.estimators = _as_list(s.n), _as_list(s.p), _as_list(s.estimators)
    return cfg


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = from_dict(raw, source=str(path))
    # relative data paths resolve against the config file's directory
    if cfg.data.path is not None and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str((path.parent / cfg.data.path).resolve())
    return cfg


def _positive(name, v, integer=False):
    ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0
    if integer:
        ok = ok and isinstance(v, int)
    if not ok:
        raise ConfigError(f"{name} must be a positive {'integer' if integer else 'number'}, got {v!r}")


def _level(name, v):
    if not isinstance(v, (int, float)) or not 0 < v < 1:
        raise ConfigError(f"{name} must lie in (0, 1), got {v!r}")


def _validate(cfg: RunConfig, need_data: bool) -> None:
    r, e, t, s, g = cfg.run, cfg.estimator, cfg.targets, cfg.simulate, cfg.dgp
    if not isinstance(r.seed, int) or r.seed < 0:
        raise ConfigError(f"run.seed must be a non-negative integer, got {r.seed!r}")
    _positive("run.threads", r.threads, integer=True)
    for name in ("degree", "folds", "w_degree"):
        _positive(f"estimator.{name}", getattr(e, name), integer=True)
    if e.folds < 2:
        raise ConfigError("estimator.folds must be at least 2")
    for name in ("c_lambda", "c_prime", "c_dprime"):
        _positive(f"estimator.{name}", getattr(e, name))
    if not 0 < e.epsilon < 0.5:
        raise ConfigError(f"estimator.epsilon must lie in (0, 0.5), got {e.epsilon!r}")
    if isinstance(e.lam, str):
        if e.lam not in ("auto", "validate"):
            raise ConfigError(f"estimator.lambda must be 'auto', 'validate' or a number, got {e.lam!r}")
    else:
        _positive("estimator.lambda", e.lam)
    for which, ls in (("propensity", cfg.propensity), ("outcome", cfg.outcome)):
        if ls.kind not in KINDS:
            raise ConfigError(f"learners.{which}.kind must be one of {KINDS}, got {ls.kind!r}")
        _positive(f"learners.{which}.lambda_rule", ls.lambda_rule)
        if not isinstance(ls.options, dict):
            raise ConfigError(f"learners.{which}.options must be a table")
    if cfg.outcome.kind == "l1_logistic":
        raise ConfigError("learners.outcome.kind cannot be l1_logistic")
    _level("targets.level", t.level)
    for lv in t.band_levels:
        _level("targets.band_levels", lv)
    _positive("targets.z_points", t.z_points, integer=True)
    if t.coordinates is not None:
        if not t.coordinates or not all(isinstance(c, int) and c >= 1 for c in t.coordinates):
            raise ConfigError("targets.coordinates must be 1-based positive integers")
    for fn in t.functionals:
        if not isinstance(fn, dict) or not fn:
            raise ConfigError("each targets.functionals entry must be a non-empty table {index = weight}")
        for k, v in fn.items():
            if not str(k).isdigit() or int(k) < 1 or not isinstance(v, (int, float)):
                raise ConfigError(f"bad functional entry {k!r} = {v!r}")
    if t.z_grid is not None and (not t.z_grid or not all(isinstance(v, (int, float)) for v in t.z_grid)):
        raise ConfigError("targets.z_grid must be a non-empty list of numbers")
    if g.family not in ("dgp1", "dgp2"):
        raise ConfigError(f"dgp.family must be dgp1 or dgp2, got {g.family!r}")
    if g.baseline not in ("own", "untreated"):
        raise ConfigError(f"dgp.baseline must be 'own' or 'untreated', got {g.baseline!r}")
    if not 0 <= g.rho < 1:
        raise ConfigError("dgp.rho must lie in [0, 1)")
    _positive("simulate.reps", s.reps, integer=True)
    if s.reps < 2:
        raise ConfigError("simulate.reps must be at least 2")
    for v in s.n:
        _positive("simulate.n", v, integer=True)
        if v < 20:
            raise ConfigError("simulate.n must be at least 20")
    for v in s.p:
        _positive("simulate.p", v, integer=True)
    for est in s.estimators:
        if est not in ("drdid", "semidid"):
            raise ConfigError(f"simulate.estimators entries must be drdid or semidid, got {est!r}")
    if need_data:
        if cfg.data.path is None:
            raise ConfigError("data.path is required")
        if not Path(cfg.data.path).is_file():
            raise ConfigError(f"data file not found: {cfg.data.path}")
