"""Penalized additive models with REML smoothing selection.

Cardinal cubic regression splines with exact wiggliness penalties, an
empirical-Bayes fitting engine (penalized IRLS inside, Nelder-Mead on the
REML criterion outside), posterior covariance with optional correction for
smoothing-parameter uncertainty, posterior simulation and credible bands, a
conjugate Gibbs sampler for the fully Bayesian gaussian model, and a small
command line tool for batch studies.
"""

from .assembly import (
    Dataset,
    DesignMatrices,
    ModelSpec,
    SmoothSpec,
    TermInfo,
    assemble_penalty,
    build_design,
    prediction_matrix,
    term_matrix,
)
from .basis import (
    BasisBlock,
    ConstraintTransform,
    KnotVector,
    PenaltyBlock,
    constraint,
    cr_basis,
    cr_penalty,
    nullspace_penalty,
    place_knots,
    pseudo_inverse,
    shrinkage_penalty,
)
from .errors import (
    DataError,
    DegenerateCovariateError,
    GamsmoothError,
    NumericalError,
    OptimizationError,
    PirlsDivergenceError,
)
from .estimator import AdditiveModel
from .families import BINOMIAL, GAUSSIAN, POISSON, Family, get_family
from .fit import (
    FittedModel,
    PirlsResult,
    edf,
    fit_additive_model,
    optimize_reml,
    pirls,
    reml_criterion,
)
from .gibbs import (
    GibbsChains,
    GibbsConfig,
    chain_diagnostics,
    empirical_cov,
    ess,
    gibbs_fit,
    split_ratio,
)
from .modelio import ModelArtifact, load_model, save_model
from .posterior import (
    IntervalBand,
    PosteriorCov,
    PosteriorDraws,
    beta_rho_jacobian,
    corrected_cov,
    credible_band,
    posterior_cov,
    simulate_posterior,
    term_band,
    term_grid,
)
from .simdata import SimDataset, gu_wahba_data, two_smooth_subset

__version__ = "0.1.0"

__all__ = [
    "AdditiveModel",
    "BasisBlock",
    "BINOMIAL",
    "ConstraintTransform",
    "chain_diagnostics",
    "constraint",
    "corrected_cov",
    "cr_basis",
    "cr_penalty",
    "credible_band",
    "Dataset",
    "DataError",
    "DegenerateCovariateError",
    "DesignMatrices",
    "edf",
    "empirical_cov",
    "ess",
    "Family",
    "fit_additive_model",
    "FittedModel",
    "GAUSSIAN",
    "GamsmoothError",
    "get_family",
    "gibbs_fit",
    "GibbsChains",
    "GibbsConfig",
    "gu_wahba_data",
    "IntervalBand",
    "KnotVector",
    "load_model",
    "ModelArtifact",
    "ModelSpec",
    "NumericalError",
    "save_model",
    "nullspace_penalty",
    "OptimizationError",
    "optimize_reml",
    "PenaltyBlock",
    "pirls",
    "PirlsDivergenceError",
    "PirlsResult",
    "place_knots",
    "POISSON",
    "posterior_cov",
    "PosteriorCov",
    "PosteriorDraws",
    "prediction_matrix",
    "pseudo_inverse",
    "reml_criterion",
    "shrinkage_penalty",
    "simulate_posterior",
    "SimDataset",
    "SmoothSpec",
    "split_ratio",
    "term_band",
    "term_grid",
    "term_matrix",
    "TermInfo",
    "beta_rho_jacobian",
    "two_smooth_subset",
    "build_design",
    "assemble_penalty",
]
