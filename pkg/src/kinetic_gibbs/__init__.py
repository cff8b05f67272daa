"""SGHMC laboratory: sampler, test problems, explicit constants, W2 estimators
and Lyapunov diagnostics."""

from .constants import P0, ConstantsReport, ProblemParams, eta_max, evaluate_all, gibbs_gap
from .diagnostics import MomentSeries, check_drift, check_moment_bounds, lyapunov_value, track_moments
from .models import (
    BLRDataset,
    Declared,
    GradientModel,
    blr_model,
    blr_synthetic_data,
    check_unbiasedness,
    gaussian_location_model,
    mixture_prior_model,
    probe_dissipativity,
    probe_lipschitz,
    quadratic_model,
)
from .sampler import (
    ChainState,
    DivergenceError,
    EnsembleDivergenceError,
    GaussianMomentsPair,
    InitialSpec,
    SamplerConfig,
    exact_ou_moments,
    run_chain,
    run_ensemble,
    sample_extended_quadratic,
    sghmc_quadratic_moments,
    sghmc_step,
)
from .wasserstein import GaussianMoments, fit_gaussian, w2_assignment, w2_gaussian

__version__ = "0.1.0"
