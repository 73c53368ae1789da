"""Mediation analysis with a nonignorably missing confounder, identified through a shadow variable."""
from .basis import BasisSpec, LinkSpec, SieveFeatures, build_basis, evaluate_basis, link_apply, link_grad
from .config import SieveConfig
from .data import ColumnRoles, Dataset, dataset_from_frame, read_csv, write_csv
from .dgp import DgpConfig, LatentTruth, generate
from .estimands import PointEstimates, estimate_alpha, estimate_theta, mediation_effects
from .exceptions import (
    BootstrapUnstableError,
    ConvergenceError,
    InsufficientDataError,
    InvalidConfigError,
    NumericalError,
    SchemaError,
    SingularDesignError,
    SiomedError,
)
from .inference import InferenceReport, bootstrap_ci, efficiency_loss_diagnostic
from .nuisance import LinearFit
from .optim import OptimOptions
from .pipeline import SIOMediation, point_estimates, run_pipeline
from .seriesreg import SeriesRegressor, fit_series
from .smd import ShadowWeightEstimator, SmdProblem, WeightFit, solve_smd

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "BootstrapUnstableError", "ColumnRoles", "ConvergenceError", "Dataset", "DgpConfig",
    "InferenceReport", "InsufficientDataError", "InvalidConfigError", "LatentTruth", "LinearFit", "LinkSpec",
    "NumericalError", "OptimOptions", "PointEstimates", "SIOMediation", "SchemaError", "SeriesRegressor",
    "ShadowWeightEstimator", "SieveConfig", "SieveFeatures", "SingularDesignError", "SiomedError", "SmdProblem",
    "WeightFit", "bootstrap_ci", "build_basis", "dataset_from_frame", "efficiency_loss_diagnostic",
    "estimate_alpha", "estimate_theta", "evaluate_basis", "fit_series", "generate", "link_apply", "link_grad",
    "mediation_effects", "point_estimates", "read_csv", "run_pipeline", "solve_smd", "write_csv",
]
