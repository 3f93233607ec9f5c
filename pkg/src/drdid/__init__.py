"""Doubly robust two-stage DiD estimation of heterogeneous ATT."""

__version__ = "0.1.0"

from .data import CsvSchema, Sample, TruthInfo, load_csv, validate_overlap, write_csv
from .errors import ConfigError, DataError, DrDidError, NumericalError
from .estimator import DrDidFit, fit, fit_semidid, predict_att, pseudo_outcome
from .inference import BetaDebiaser, ci_band_export, debias_beta, debias_f
from .nuisance import LearnerSpec, cross_fit, misspecify, oracle_nuisance
from .sieve import ProjectionCache, build_basis, eval_basis
from .simulation import DgpConfig, EstimatorSettings, TargetSpec, gen_sample, run_mc

__all__ = [
    "__version__", "CsvSchema", "Sample", "TruthInfo", "load_csv", "validate_overlap", "write_csv",
    "ConfigError", "DataError", "DrDidError", "NumericalError",
    "DrDidFit", "fit", "fit_semidid", "predict_att", "pseudo_outcome",
    "BetaDebiaser", "ci_band_export", "debias_beta", "debias_f",
    "LearnerSpec", "cross_fit", "misspecify", "oracle_nuisance",
    "ProjectionCache", "build_basis", "eval_basis",
    "DgpConfig", "EstimatorSettings", "TargetSpec", "gen_sample", "run_mc",
]
