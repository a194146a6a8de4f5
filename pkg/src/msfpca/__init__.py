"""Multivariate sparse functional principal components analysis.

Joint Bayesian fitting of several sparsely and irregularly observed
longitudinal outcomes, with a constrained score covariance, post hoc
identification of the loadings, and mutual-information summaries of the
association between outcomes.
"""

from .association import conditional_mi, marginal_mi, normalize, posterior_association
from .basis import OrthonormalBasis, SplineBasisSpec, bspline_matrix, evaluate, orthonormalize
from .covariance import BlockStructure, ConstrainedCholesky, ScoreCovariance, assemble, build_factor, count_unconstrained
from .dataset import MultiBlockDataset, ObservationRecord, load_long_records, read_csv, standardize_and_rescale
from .diagnostics import LooReport, PpcExport, fit_generalized_pareto, pointwise_loglik, posterior_predictive, psis_loo
from .model import ModelSpec, MsfpcaModel, ParameterVector, gradient, log_posterior
from .pipeline import FitResult, fit
from .posterior import FittedModel, PosteriorSample, align_draws, rotate, rotate_draw, summarize_curves
from .sampler import ChainConfig, Draws, run
from .simulate import ScenarioSpec, ScenarioTruth, scenario_sigma, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "BlockStructure",
    "ChainConfig",
    "ConstrainedCholesky",
    "Draws",
    "FitResult",
    "FittedModel",
    "LooReport",
    "ModelSpec",
    "MsfpcaModel",
    "MultiBlockDataset",
    "ObservationRecord",
    "OrthonormalBasis",
    "ParameterVector",
    "PosteriorSample",
    "PpcExport",
    "ScenarioSpec",
    "ScenarioTruth",
    "ScoreCovariance",
    "SplineBasisSpec",
    "align_draws",
    "assemble",
    "bspline_matrix",
    "build_factor",
    "conditional_mi",
    "count_unconstrained",
    "evaluate",
    "fit",
    "fit_generalized_pareto",
    "gradient",
    "load_long_records",
    "log_posterior",
    "marginal_mi",
    "normalize",
    "orthonormalize",
    "pointwise_loglik",
    "posterior_association",
    "posterior_predictive",
    "psis_loo",
    "read_csv",
    "rotate",
    "rotate_draw",
    "run",
    "scenario_sigma",
    "simulate_dataset",
    "standardize_and_rescale",
    "summarize_curves",
]
