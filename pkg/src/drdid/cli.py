"""Command-line front end.

    drdid simulate --config run.toml [--seed N] [--threads N] [--out DIR]
    drdid estimate --config run.toml ...
    drdid band     --config run.toml ...

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Logs go to stderr as ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import RunConfig, load_config
from .data import CsvSchema, load_csv, validate_overlap
from .errors import ConfigError, DrDidError
from .estimator import fit as fit_drdid
from .estimator import pseudo_outcome
from .inference import BetaDebiaser, ci_band_export, debias_f
from .nuisance import cross_fit
from .simulation import (
    DgpConfig,
    EstimatorSettings,
    TargetSpec,
    default_z_grid,
    render_table,
    run_mc,
)

log = logging.getLogger("drdid")


class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        return f"level={record.levelname.lower()} logger={record.name} {record.getMessage()}"


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(_KeyValueFormatter())
    root.addHandler(h)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)


def _kv(**kw) -> str:
    parts = []
    for k, v in kw.items():
        if isinstance(v, (float, np.floating)):
            v = repr(float(v))
        v = str(v)
        parts.append(f"{k}={json.dumps(v) if (' ' in v or not v) else v}")
    return " ".join(parts)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _settings(cfg: RunConfig) -> EstimatorSettings:
    e = cfg.estimator
    return EstimatorSettings(
        degree=e.degree, folds=e.folds, epsilon=e.epsilon, c_lambda=e.c_lambda,
        c_prime=e.c_prime, c_dprime=e.c_dprime, w_degree=e.w_degree,
        propensity=cfg.propensity.spec(), outcome=cfg.outcome.spec(),
    )


def _provenance(cfg: RunConfig, command: str) -> dict:
    return {"version": __version__, "command": command, "config": cfg.as_dict()}


# ------------------------------------------------------------- simulate

def cmd_simulate(cfg: RunConfig) -> int:
    cfg.validate()
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.estimator.lam != "auto":
        log.warning(_kv(event="ignored_key", key="estimator.lambda", reason="simulate always uses auto"))
    settings = _settings(cfg)
    t = cfg.targets
    targets = TargetSpec(
        coordinates=None if t.coordinates is None else [c - 1 for c in t.coordinates],
        z_grid=t.z_grid if t.z_grid is not None else default_z_grid(t.z_points).tolist(),
        level=t.level,
    )
    reports = []
    for n, p, est in itertools.product(cfg.simulate.n, cfg.simulate.p, cfg.simulate.estimators):
        dgp = DgpConfig(
            family=cfg.dgp.family, n=n, p=p, rho=cfg.dgp.rho, s_beta=cfg.dgp.s_beta,
            s_theta=cfg.dgp.s_theta, seed=cfg.run.seed, baseline=cfg.dgp.baseline,
        )
        if targets.coordinates is not None and max(targets.coordinates) >= p:
            raise ConfigError(f"targets.coordinates exceed p={p}")
        log.info(_kv(event="cell_start", family=dgp.family, n=n, p=p, estimator=est, reps=cfg.simulate.reps))
        rep = run_mc(dgp, est, reps=cfg.simulate.reps, targets=targets,
                     parallelism=cfg.run.threads, settings=settings)
        if rep.infeasible:
            log.info(_kv(event="cell_infeasible", n=n, p=p, estimator=est))
        else:
            log.info(_kv(
                event="cell_done", n=n, p=p, estimator=est, failed=rep.n_failed,
                lin_coverage=rep.linear.coverage, lin_mse=rep.linear.mse,
                np_coverage=rep.nonparametric.coverage, np_mse=rep.nonparametric.mse,
            ))
        reports.append(rep)
    prov = _provenance(cfg, "simulate")
    _dump_json({**prov, "reports": [r.to_dict() for r in reports]}, out / "report.json")
    csv_path, txt_path = render_table(reports, out / "table", header=prov)
    log.info(_kv(event="written", report=out / "report.json", table_csv=csv_path, table_txt=txt_path))
    return 0


# ------------------------------------------------------------- estimate / band

def _schema(cfg: RunConfig) -> CsvSchema:
    d = cfg.data
    try:
        return CsvSchema(d=d.d, z=d.z, x=d.x, dy=d.dy, y_post=d.y_post, y_pre=d.y_pre)
    except ValueError as exc:
        raise ConfigError(f"[data]: {exc}") from None


def _run_estimation(cfg: RunConfig, with_beta: bool = True):
    cfg.validate(need_data=True)
    e, t = cfg.estimator, cfg.targets
    sample = load_csv(cfg.data.path, _schema(cfg))
    log.info(_kv(event="data_loaded", path=cfg.data.path, **sample.metadata()))
    with threadpool_limits(limits=1):
        nuis = cross_fit(sample, cfg.propensity.spec(), cfg.outcome.spec(), k=e.folds,
                         epsilon=e.epsilon, seed=cfg.run.seed, w_degree=e.w_degree)
        diag = validate_overlap(nuis.pi_hat, e.epsilon, sample.d)
        log.info(_kv(event="overlap", **diag.as_dict()))
        pseudo = pseudo_outcome(sample, nuis)
        fit = fit_drdid(sample, nuis, degree=e.degree, lam=e.lam, c_lambda=e.c_lambda,
                        pseudo=pseudo, seed=cfg.run.seed)
        log.info(_kv(event="second_stage", lam=fit.lam, nonzeros=int(np.count_nonzero(fit.beta_hat)),
                     k_n=fit.basis.k_n, converged=fit.converged))
        grid = np.asarray(t.z_grid, dtype=float) if t.z_grid is not None else default_z_grid(t.z_points, sample.z)
        finf = debias_f(fit, sample, nuis, pseudo, grid, level=t.level, c_dprime=e.c_dprime)
        log.info(_kv(event="f_debiased", lambda_dprime=finf.lambda_dprime, flags=",".join(finf.flags) or "none"))
        betas = []
        if with_beta:
            deb = BetaDebiaser(fit, c_prime=e.c_prime)
            coords = t.coordinates if t.coordinates is not None else list(range(1, min(sample.p, 10) + 1))
            xis = []
            for c in coords:
                if c > sample.p:
                    raise ConfigError(f"targets.coordinates entry {c} exceeds p={sample.p}")
                xi = np.zeros(sample.p)
                xi[c - 1] = 1.0
                xis.append((f"beta_{c}", xi))
            for i, fn in enumerate(t.functionals):
                xi = np.zeros(sample.p)
                for k, v in fn.items():
                    if int(k) > sample.p:
                        raise ConfigError(f"functional index {k} exceeds p={sample.p}")
                    xi[int(k) - 1] = float(v)
                xis.append((f"functional_{i + 1}", xi))
            for name, xi in xis:
                b = deb(xi, t.level)
                betas.append((name, b))
                log.info(_kv(event="functional", target=name, t_hat=b.t_hat, se=b.se,
                             ci_low=b.ci_low, ci_high=b.ci_high, lambda_prime=b.lambda_prime))
    return sample, nuis, diag, fit, finf, betas


def cmd_estimate(cfg: RunConfig) -> int:
    sample, nuis, diag, fit, finf, betas = _run_estimation(cfg)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "estimate")
    result = {
        **prov,
        "sample": sample.metadata(),
        "overlap": diag.as_dict(),
        "fit": fit.to_dict(),
        "targets": {name: b.to_dict() for name, b in betas},
        "f": finf.to_dict(),
    }
    _dump_json(result, out / "estimate.json")
    ci_band_export(finf, out / "band.csv", header=prov)
    log.info(_kv(event="written", estimate=out / "estimate.json", band=out / "band.csv"))
    return 0


def _level_tag(level: float) -> str:
    return f"{level:.4f}".rstrip("0").rstrip(".").replace("0.", "")


def cmd_band(cfg: RunConfig) -> int:
    _, _, _, _, finf, _ = _run_estimation(cfg, with_beta=False)
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "band")
    written = [ci_band_export(finf, out / "band.csv", header={**prov, "level": finf.level})]
    for lv in cfg.targets.band_levels:
        b = finf.at_level(lv)
        written.append(ci_band_export(b, out / f"band_{_level_tag(lv)}.csv", header={**prov, "level": lv}))
    log.info(_kv(event="written", files=",".join(str(w) for w in written)))
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "band": cmd_band}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drdid", description="Doubly robust DiD with heterogeneous ATT.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("simulate", "run Monte Carlo cells and render tables"),
        ("estimate", "fit and de-biased inference on a CSV"),
        ("band", "export the de-biased f band"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=name != "simulate", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--threads", type=int, help="override run.threads (worker processes)")
        p.add_argument("--out", help="override run.out (output directory)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads is not None:
        cfg.run.threads = args.threads
    if args.out is not None:
        cfg.run.out = args.out
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except DrDidError as exc:
        log.error(_kv(event="failed", error=type(exc).__name__, message=str(exc)))
        return exc.exit_code
    except OSError as exc:
        log.error(_kv(event="failed", error=type(exc).__name__, message=str(exc)))
        return 1


if __name__ == "__main__":
    sys.exit(main())
