"""Conditionally Gaussian state-space machinery.

The volatility equation in mean-augmented form: the state is
``(h_t - mu_t, mu_t)`` with transition ``diag(phi, 1)``, so the level
``mu`` is carried in the state and integrated out by the Kalman filter
alongside the path.  Fixing ``v_mu = 0`` and ``m_mu = mu`` recovers the
centered form with a known level, which is what the EM sampler uses.

All operations are pure given their generator; independent series can be
filtered or sampled concurrently on distinct streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import MixtureTable, NumericalError, SvParams


@dataclass(frozen=True)
class StateSpaceForm:
    """Fixed-shape form for one volatility equation.

    Only the two shapes used by the samplers exist: the mean-augmented
    univariate form and the same form applied to a per-series factor
    residual.  ``v_mu = 0`` degenerates the second state to the constant
    ``m_mu``.
    """

    phi: float
    sigma: float
    m_mu: float
    v_mu: float

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise ValueError(f"|phi| must be < 1, got {self.phi}")
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0")
        if self.v_mu < 0.0:
            raise ValueError("v_mu must be >= 0")

    @classmethod
    def mu_augmented(cls, phi: float, sigma: float, m_mu: float, v_mu: float) -> "StateSpaceForm":
        return cls(phi=phi, sigma=sigma, m_mu=m_mu, v_mu=v_mu)

    @classmethod
    def centered(cls, params: SvParams) -> "StateSpaceForm":
        """Form with the level pinned at a known value (EM sampling)."""
        return cls(phi=params.phi, sigma=params.sigma, m_mu=params.mu, v_mu=0.0)

    @property
    def transition_matrix(self) -> np.ndarray:
        return np.array([[self.phi, 0.0], [0.0, 1.0]])

    @property
    def noise_loading(self) -> np.ndarray:
        return np.array([self.sigma, 0.0])

    @property
    def observation_row(self) -> np.ndarray:
        return np.array([1.0, 1.0])

    @property
    def initial_mean(self) -> np.ndarray:
        return np.array([0.0, self.m_mu])

    @property
    def initial_cov(self) -> np.ndarray:
        sv = self.sigma**2 / (1.0 - self.phi**2)
        return np.array([[sv + self.v_mu, -self.v_mu], [-self.v_mu, self.v_mu]])


def _obs_params(k_idx: np.ndarray, table: MixtureTable) -> tuple[np.ndarray, np.ndarray]:
    k = np.asarray(k_idx, dtype=np.int64)
    if k.min(initial=0) < 0 or k.max(initial=0) >= table.n_components:
        raise ValueError("indicator out of range for the mixture table")
    return table.means[k], table.variances[k]


def kalman_loglik(
    form: StateSpaceForm, z: np.ndarray, k_idx: np.ndarray, table: MixtureTable
) -> float:
    """Exact log p(z | phi, sigma, K) for the conditionally Gaussian model.

    Given the indicator path, observation t has mean shift ``m[K_t]`` and
    noise variance ``v[K_t]``; the state (path and level) is integrated
    out by the filter.
    """
    z = np.ascontiguousarray(z, dtype=float)
    if z.shape[0] != len(k_idx):
        raise ValueError("z and k_idx must have equal length")
    mk, vk = _obs_params(k_idx, table)
    ll = _kernels.sv_filter_loglik(z, mk, vk, form.phi, form.sigma, form.m_mu, form.v_mu)
    if np.isnan(ll):
        raise NumericalError("Kalman filter produced a non-positive predictive variance")
    return float(ll)


def ffbs_sample(
    form: StateSpaceForm,
    z: np.ndarray,
    k_idx: np.ndarray,
    table: MixtureTable,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Draw a full path from p(h | z, phi, sigma, K) by backward sampling.

    Returns ``(h, mu)``: the log-volatility path and the level draw taken
    from the second state component (constant along the path by
    construction of the transition).
    """
    z = np.ascontiguousarray(z, dtype=float)
    T = z.shape[0]
    mk, vk = _obs_params(k_idx, table)
    fm = np.empty((T, 2))
    fc = np.empty((T, 3))
    ll = _kernels.sv_filter_store(z, mk, vk, form.phi, form.sigma, form.m_mu, form.v_mu, fm, fc)
    if np.isnan(ll):
        raise NumericalError("Kalman filter produced a non-positive predictive variance")
    eps = rng.standard_normal((T, 2))
    x = _kernels.sv_ffbs(fm, fc, form.phi, form.sigma, eps)
    h = x[:, 0] + x[:, 1]
    return h, float(x[0, 1])


def sample_indicators(
    z: np.ndarray, h: np.ndarray, table: MixtureTable, rng: np.random.Generator
) -> np.ndarray:
    """Sample mixture indicators: p(K_t = i | z_t, h_t) is proportional to
    w_i * N(z_t; h_t + m_i, v_i), independently over t."""
    z = np.asarray(z, dtype=float)
    h = np.asarray(h, dtype=float)
    if z.shape != h.shape:
        raise ValueError("z and h must have equal length")
    resid = z[:, None] - h[:, None] - table.means[None, :]
    logw = (
        table.log_weights[None, :]
        - 0.5 * np.log(2.0 * np.pi * table.variances)[None, :]
        - 0.5 * resid**2 / table.variances[None, :]
    )
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    cum = np.cumsum(w, axis=1)
    u = rng.random(z.shape[0])
    return (u[:, None] > cum).sum(axis=1).astype(np.int64)
