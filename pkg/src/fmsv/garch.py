"""Univariate Gaussian GARCH(1,1): maximum likelihood and MCMC.

The conditional variance recursion has no latent path to integrate, so
this model exercises the proposal machinery on a plain likelihood:
mode, k-step and delayed-rejection chains over the single
(omega, alpha, beta) block.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, gammaln

from . import _kernels
from .chain import BlockStats, Chain, McmcConfig, make_builder, mh_block_update
from .core import NumericalError
from .proposals import AdaptiveRwState, fd_hessian

# margin exceeds twice the finite-difference step (Hessian probes nest)
_CLIP = 5e-4


@dataclass(frozen=True)
class GarchParams:
    """omega > 0, alpha >= 0, beta_g >= 0 with alpha + beta_g < 1."""

    omega: float
    alpha: float
    beta_g: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError("omega must be > 0")
        if self.alpha < 0 or self.beta_g < 0:
            raise ValueError("alpha and beta_g must be >= 0")
        if not self.alpha + self.beta_g < 1:
            raise ValueError("alpha + beta_g must be < 1 (covariance stationarity)")

    def as_array(self) -> np.ndarray:
        return np.array([self.omega, self.alpha, self.beta_g])


def _loglik_vec(x: np.ndarray, y2: np.ndarray, s1: float) -> float:
    ll = _kernels.garch_loglik_kernel(y2, float(x[0]), float(x[1]), float(x[2]), s1)
    return -np.inf if np.isnan(ll) else float(ll)


def garch_loglik(params: GarchParams, y: np.ndarray) -> float:
    """Gaussian log-likelihood; the recursion is seeded with the sample
    variance of y (and the pre-sample squared shock set to the same)."""
    y = np.asarray(y, dtype=float).ravel()
    y2 = y * y
    ll = _loglik_vec(params.as_array(), y2, float(np.var(y)))
    if not np.isfinite(ll):
        raise NumericalError("conditional variance left the positive region")
    return ll


@dataclass(frozen=True)
class GarchPrior:
    """omega ~ InverseGamma(2, Var(y) * (1 - 0.95)); alpha ~ Beta(1, 8);
    beta_g ~ Beta(8, 1); support truncated to alpha + beta_g < 1 (the
    truncation constant is ignored)."""

    omega_scale: float
    omega_shape: float = 2.0
    alpha_a: float = 1.0
    alpha_b: float = 8.0
    beta_a: float = 8.0
    beta_b: float = 1.0

    @classmethod
    def from_data(cls, y: np.ndarray) -> "GarchPrior":
        return cls(omega_scale=float(np.var(y)) * (1.0 - 0.95))

    def logpdf(self, x: np.ndarray) -> float:
        omega, alpha, beta_g = float(x[0]), float(x[1]), float(x[2])
        if omega <= 0 or not 0 < alpha < 1 or not 0 < beta_g < 1:
            return -np.inf
        if alpha + beta_g >= 1.0:
            return -np.inf
        lp = (
            self.omega_shape * math.log(self.omega_scale)
            - gammaln(self.omega_shape)
            - (self.omega_shape + 1.0) * math.log(omega)
            - self.omega_scale / omega
        )
        lp += (
            -betaln(self.alpha_a, self.alpha_b)
            + (self.alpha_a - 1.0) * math.log(alpha)
            + (self.alpha_b - 1.0) * math.log1p(-alpha)
        )
        lp += (
            -betaln(self.beta_a, self.beta_b)
            + (self.beta_a - 1.0) * math.log(beta_g)
            + (self.beta_b - 1.0) * math.log1p(-beta_g)
        )
        return float(lp)


@dataclass
class GarchMle:
    params: GarchParams
    se: np.ndarray
    converged: bool
    at_boundary: bool


def garch_mle(y: np.ndarray) -> GarchMle:
    """Constrained maximum likelihood with standard errors from the
    inverse numerical Hessian; flags convergence on the boundary."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 50:
        raise ValueError("need at least 50 observations")
    y2 = y * y
    s1 = float(np.var(y))
    x0 = np.array([0.1 * s1, 0.1, 0.8])

    def neg(x):
        return -_loglik_vec(x, y2, s1)

    res = minimize(
        neg,
        x0,
        method="SLSQP",
        bounds=[(1e-8, None), (0.0, 1.0 - 1e-8), (0.0, 1.0 - 1e-8)],
        constraints=[{"type": "ineq", "fun": lambda x: 1.0 - 1e-6 - x[1] - x[2]}],
        options={"maxiter": 500, "ftol": 1e-12},
    )
    x = res.x
    at_boundary = bool(
        x[0] < 1e-7 or x[1] < 1e-7 or x[2] < 1e-7 or (x[1] + x[2]) > 1.0 - 1e-5
    )
    H = fd_hessian(lambda v: _loglik_vec(v, y2, s1), x)
    try:
        cov = np.linalg.inv(-H)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))
    except np.linalg.LinAlgError:
        se = np.full(3, np.nan)
    params = GarchParams(omega=float(x[0]), alpha=float(max(x[1], 0.0)),
                         beta_g=float(max(x[2], 0.0)))
    return GarchMle(params=params, se=se, converged=bool(res.success),
                    at_boundary=at_boundary)


def _clip_garch(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[0] = min(max(out[0], _CLIP), 1e8)
    out[1] = min(max(out[1], _CLIP), 1.0 - _CLIP)
    out[2] = min(max(out[2], _CLIP), 1.0 - _CLIP)
    s = out[1] + out[2]
    if s > 1.0 - _CLIP:
        scale = (1.0 - _CLIP) / s
        out[1] *= scale
        out[2] *= scale
    return out


def run_garch_chain(
    y: np.ndarray,
    prior: Optional[GarchPrior] = None,
    config: Optional[McmcConfig] = None,
    rng: Optional[np.random.Generator] = None,
    prior_only: bool = False,
) -> Chain:
    """MH chain over (omega, alpha, beta) in a single block.

    ``prior_only`` replaces the likelihood by zero so the chain targets
    the (truncated) prior, which is a standard sampler validation.
    """
    y = np.asarray(y, dtype=float).ravel()
    prior = prior or GarchPrior.from_data(y)
    config = config or McmcConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    y2 = y * y
    s1 = float(np.var(y))

    if prior_only:
        def loglik(x):
            return 0.0
    else:
        def loglik(x):
            return _loglik_vec(x, y2, s1)

    build = make_builder(loglik, config, project=_clip_garch)
    theta = _clip_garch(np.array([0.1 * s1 if s1 > 0 else 0.1, 0.1, 0.8]))
    stats = BlockStats()
    rw_state = AdaptiveRwState(dim=3)
    total = config.burn_in + config.n_iter
    draws = np.empty((config.n_iter, 3))
    seconds = np.empty(total)
    for it in range(total):
        t0 = time.perf_counter()
        theta, _ = mh_block_update(
            theta, loglik, prior.logpdf, build, config.method, rw_state, rng, stats
        )
        rw_state.update(theta)
        seconds[it] = time.perf_counter() - t0
        if it >= config.burn_in:
            draws[it - config.burn_in] = theta
    return Chain(
        iterates=draws,
        labels=["omega", "alpha", "beta"],
        block_stats={"garch": stats},
        burn_in=config.burn_in,
        iter_seconds=seconds,
        method=config.method,
    )
