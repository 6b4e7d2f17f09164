"""Adaptive Gaussian copula ABC.

Likelihood-free posterior estimation in two phases: a coarse regression
ABC pass builds a Gaussian proposal, and a fine pass fits a Gaussian copula
to regression-adjusted samples drawn from it, then reweights by
``prior / proposal``. Classical rejection and regression ABC baselines,
four benchmark simulators and a JSD evaluation harness are included.
"""

from .copula import GaussianCopulaModel, copula_density, copula_sample, fit_copula
from .core import InsufficientBudgetError, Standardizer, UniformBoxPrior, fit_standardizer, select_top
from .evaluation import (
    analytic_posterior,
    build_grid,
    compare,
    contour_slice,
    jsd,
    reference_posterior,
    residual_heterogeneity,
)
from .grid import DensityGrid, GridSpec
from .pipeline import (
    BudgetPlan,
    GaussianProposal,
    KdePosterior,
    WeightedPosterior,
    posterior_density,
    posterior_sample,
    run_agc_abc,
    run_gc_abc,
    run_method,
    run_nn_abc,
    run_reg_abc,
    run_rejection_abc,
)
from .regression import MlpSpec, adjust, fit_linear, fit_mlp, select_model
from .simulators import get_model, observe, simulate_table

__version__ = "0.1.0"

__all__ = [
    "BudgetPlan",
    "DensityGrid",
    "GaussianCopulaModel",
    "GaussianProposal",
    "GridSpec",
    "InsufficientBudgetError",
    "KdePosterior",
    "MlpSpec",
    "Standardizer",
    "UniformBoxPrior",
    "WeightedPosterior",
    "adjust",
    "analytic_posterior",
    "build_grid",
    "compare",
    "contour_slice",
    "copula_density",
    "copula_sample",
    "fit_copula",
    "fit_linear",
    "fit_mlp",
    "fit_standardizer",
    "get_model",
    "jsd",
    "observe",
    "posterior_density",
    "posterior_sample",
    "reference_posterior",
    "residual_heterogeneity",
    "run_agc_abc",
    "run_gc_abc",
    "run_method",
    "run_nn_abc",
    "run_reg_abc",
    "run_rejection_abc",
    "select_model",
    "select_top",
    "simulate_table",
]
