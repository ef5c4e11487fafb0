"""Estimation of univariate and factor multivariate stochastic
volatility models by MCMC (mode, k-step and delayed-rejection
proposals) and Monte Carlo EM, with marginal-likelihood factor-count
selection via auxiliary particle filtering and Gaussian-copula
posterior ordinates."""

from .chain import BlockStats, Chain, McmcConfig
from .core import (
    DEFAULT_OFFSET,
    Dataset,
    FmsvError,
    LatentState,
    MixtureTable,
    ModeSearchError,
    NumericalError,
    Prior,
    SvParams,
    default_mixture_table,
    make_rng,
    transform_observations,
)
from .diagnostics import chain_report, equivalence_factor, inefficiency_factor
from .factor import (
    FactorModel,
    FactorPaths,
    free_loading_indices,
    pack_loadings,
    run_fmsv_chain,
    sample_beta,
    sample_factors,
    simulate_fmsv,
    unpack_loadings,
)
from .garch import GarchMle, GarchParams, GarchPrior, garch_loglik, garch_mle, run_garch_chain
from .marglik import (
    ApfConfig,
    MarglikResult,
    OrdinatePoint,
    apf_loglik,
    auxiliary_particle_filter_loglik,
    chib_log_marginal_likelihood,
    copula_ordinate_at_median,
    normal_ordinate,
    reduced_mcmc,
)
from .mcem import (
    LouisResult,
    McemConfig,
    McemTrace,
    bridge_ratio,
    e_step_sample_usv,
    louis_information,
    m_step_beta,
    m_step_usv,
    run_mcem_fmsv,
    run_mcem_usv,
)
from .proposals import (
    AdaptiveRwState,
    GaussianProposal,
    dr_accept_stage2,
    kstep_proposal,
    mh_accept,
    mode_proposal,
)
from .simulate import PRESETS, simulate_garch, simulate_preset, simulate_usv
from .statespace import StateSpaceForm, ffbs_sample, kalman_loglik, sample_indicators
from .usv import run_usv_chain

__version__ = "0.1.0"
