"""Gibbs/MH sampler for the univariate stochastic volatility model.

Each sweep: (1) mixture indicators given the current path, (2) a joint
(phi, sigma) block with the path and its level integrated out by the
Kalman filter, using mode, k-step or delayed-rejection proposals,
(3) the path and level redrawn by forward-filtering backward-sampling.
"""

from __future__ import annotations

import time
from typing import Optional

import numpy as np

from . import _kernels
from .chain import BlockStats, Chain, McmcConfig, make_builder, mh_block_update
from .core import (
    DEFAULT_OFFSET,
    MixtureTable,
    NumericalError,
    Prior,
    default_mixture_table,
    transform_observations,
)
from .proposals import AdaptiveRwState
from .statespace import StateSpaceForm, ffbs_sample, sample_indicators

# Newton iterates are clipped into this box so the filter stays evaluable;
# the margins exceed twice the finite-difference step (the Hessian nests
# two probes) so no probe leaves the support, and the sigma cap keeps a
# runaway step from overflowing sigma^2.
_PHI_LO, _PHI_HI = 5e-4, 1.0 - 5e-4
_SIGMA_LO, _SIGMA_HI = 5e-4, 1e6


def clip_theta(theta: np.ndarray) -> np.ndarray:
    out = np.array(theta, dtype=float)
    out[0] = min(max(out[0], _PHI_LO), _PHI_HI)
    out[1] = min(max(out[1], _SIGMA_LO), _SIGMA_HI)
    return out


def theta_in_support(theta) -> bool:
    return 0.0 < theta[0] < 1.0 and theta[1] > 0.0


def make_theta_loglik(z: np.ndarray, mk: np.ndarray, vk: np.ndarray, prior: Prior):
    """log p(z | phi, sigma, K) with the path and level marginalized."""
    z = np.ascontiguousarray(z, dtype=float)

    def loglik(theta):
        if not theta_in_support(theta):
            return -np.inf
        ll = _kernels.sv_filter_loglik(
            z, mk, vk, float(theta[0]), float(theta[1]), prior.m_mu, prior.v_mu
        )
        if np.isnan(ll):
            raise NumericalError("filter failure inside theta update")
        return float(ll)

    return loglik


def sv_theta_step(
    theta: np.ndarray,
    z: np.ndarray,
    k_idx: np.ndarray,
    table: MixtureTable,
    prior: Prior,
    config: McmcConfig,
    rw_state: AdaptiveRwState,
    rng: np.random.Generator,
    stats: BlockStats,
) -> np.ndarray:
    """One (phi, sigma) block update for a single series."""
    mk = table.means[k_idx]
    vk = table.variances[k_idx]
    loglik = make_theta_loglik(z, mk, vk, prior)
    build = make_builder(loglik, config, project=clip_theta)
    theta_new, _ = mh_block_update(
        theta, loglik, prior.log_theta, build, config.method, rw_state, rng, stats
    )
    rw_state.update(theta_new)
    return theta_new


def initial_path(y: np.ndarray) -> np.ndarray:
    """Constant log-volatility path matched to the sample variance."""
    v = float(np.var(y))
    return np.full(y.shape[0], np.log(max(v, 1e-10)))


def run_usv_chain(
    y: np.ndarray,
    prior: Optional[Prior] = None,
    config: Optional[McmcConfig] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
    fixed_theta: Optional[tuple[float, float]] = None,
) -> Chain:
    """Sample the posterior of (mu, phi, sigma) for one return series.

    Parameters
    ----------
    y : array of mean-adjusted returns, length >= 10.
    prior, config, table : defaults are the standard prior, a
        delayed-rejection run of 1000 + 5000 sweeps, and the built-in
        mixture table.
    rng : optional generator; derived from ``config.seed`` when omitted.
    fixed_theta : hold (phi, sigma) fixed and sample only indicators,
        path and level (used by reduced runs and conjugate checks).

    Returns a Chain over (mu, phi, sigma) with per-stage acceptance
    counts and per-iteration timing.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 10:
        raise ValueError("need at least 10 observations")
    prior = prior or Prior()
    config = config or McmcConfig()
    table = table or default_mixture_table()
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    z = transform_observations(y, config.offset)
    h = initial_path(y)
    theta = np.array([0.9, 0.2]) if fixed_theta is None else np.asarray(fixed_theta, float)
    mu = prior.m_mu

    stats = BlockStats()
    rw_state = AdaptiveRwState(dim=2)
    total = config.burn_in + config.n_iter
    draws = np.empty((config.n_iter, 3))
    seconds = np.empty(total)

    for it in range(total):
        t0 = time.perf_counter()
        try:
            k_idx = sample_indicators(z, h, table, rng)
            if fixed_theta is None:
                theta = sv_theta_step(
                    theta, z, k_idx, table, prior, config, rw_state, rng, stats
                )
            form = StateSpaceForm.mu_augmented(
                phi=float(theta[0]), sigma=float(theta[1]),
                m_mu=prior.m_mu, v_mu=prior.v_mu,
            )
            h, mu = ffbs_sample(form, z, k_idx, table, rng)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        seconds[it] = time.perf_counter() - t0
        if it >= config.burn_in:
            draws[it - config.burn_in] = (mu, theta[0], theta[1])

    return Chain(
        iterates=draws,
        labels=["mu", "phi", "sigma"],
        block_stats={"theta": stats},
        burn_in=config.burn_in,
        iter_seconds=seconds,
        method=config.method,
    )
