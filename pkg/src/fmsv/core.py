"""Shared domain types.

Parameter containers, priors, the log-chi-squared(1) normal-mixture table
used by every conditionally Gaussian sampler, observation transforms and
the RNG contract.  Everything here is an immutable value after
construction and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, gammaln


class FmsvError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(FmsvError):
    """A numerical computation failed (non-PD matrix, degeneracy, ...)."""


class ModeSearchError(NumericalError):
    """Newton mode search did not converge; carries the best point found."""

    def __init__(self, message, best=None, value=None):
        super().__init__(message)
        self.best = best
        self.value = value


#: Guard added inside the log when squaring returns, so log(0) never occurs.
DEFAULT_OFFSET = 1e-7


def make_rng(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Create a reproducible random stream.

    Identical ``(seed, stream_id)`` pairs reproduce byte-identical draw
    sequences; distinct ``stream_id`` values yield statistically
    independent streams.  Streams are single-owner: never share one
    generator between threads, assign one per worker instead.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream_id,)))


@dataclass(frozen=True)
class SvParams:
    """AR(1) log-volatility parameters: level, persistence, vol-of-vol.

    ``|phi| < 1`` is required for stationarity.  ``sigma == 0`` is allowed
    as a degenerate (deterministic path) case used by limit checks.
    """

    mu: float
    phi: float
    sigma: float

    def __post_init__(self):
        if not abs(self.phi) < 1.0:
            raise ValueError(f"|phi| must be < 1, got {self.phi}")
        if not self.sigma >= 0.0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def stationary_var(self) -> float:
        return self.sigma**2 / (1.0 - self.phi**2)

    def as_array(self) -> np.ndarray:
        return np.array([self.mu, self.phi, self.sigma])


@dataclass(frozen=True)
class MixtureTable:
    """Normal mixture approximating the log-chi-squared(1) density.

    Component ``i`` has weight ``weights[i]``, mean ``means[i]`` and
    variance ``variances[i]``.  Weights are renormalized to sum to one
    exactly.  Any published table can be loaded from JSON
    (``{"components": [{"w": .., "m": .., "v": ..}, ...]}``); a table is
    only trustworthy if it passes the moment checks
    ``E = digamma(1/2) + log 2`` and ``Var = pi^2/2``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or w.size < 1:
            raise ValueError("weights/means/variances must be equal-length 1-d")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if np.any(v <= 0):
            raise ValueError("mixture variances must be positive")
        if abs(w.sum() - 1.0) > 1e-6:
            raise ValueError("mixture weights must sum to 1 (within 1e-6)")
        w = w / w.sum()
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def moments(self) -> tuple[float, float]:
        """Mean and variance of the mixture."""
        mean = float(self.weights @ self.means)
        second = float(self.weights @ (self.means**2 + self.variances))
        return mean, second - mean**2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` values from the mixture (for validation checks)."""
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal(n)

    def to_json(self, path) -> None:
        payload = {
            "components": [
                {"w": float(w), "m": float(m), "v": float(v)}
                for w, m, v in zip(self.weights, self.means, self.variances)
            ]
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    @classmethod
    def from_json(cls, path) -> "MixtureTable":
        with open(path) as fh:
            payload = json.load(fh)
        comps = payload["components"]
        return cls(
            weights=np.array([c["w"] for c in comps]),
            means=np.array([c["m"] for c in comps]),
            variances=np.array([c["v"] for c in comps]),
        )


# Published 7-component normal mixture for log(e^2), e ~ N(0,1).  The
# constants reproduce E = digamma(1/2) + log 2 = -1.27036 and
# Var = pi^2/2 = 4.93480 to 4 decimals (see tests for the Monte Carlo
# check); they are transcribed, not fitted here.
_LOGCHI2_7 = (
    (0.00730, -11.40039, 5.79596),
    (0.10556, -5.24321, 2.61369),
    (0.00002, -9.83726, 5.17950),
    (0.04395, 1.50746, 0.16735),
    (0.34001, -0.65098, 0.64009),
    (0.24566, 0.52478, 0.34023),
    (0.25750, -2.35859, 1.26261),
)


def default_mixture_table() -> MixtureTable:
    """The built-in log-chi-squared(1) mixture table (7 components)."""
    w, m, v = (np.array(col) for col in zip(*_LOGCHI2_7))
    return MixtureTable(weights=w, means=m, variances=v)


def transform_observations(y: np.ndarray, offset: float = DEFAULT_OFFSET) -> np.ndarray:
    """Map returns to the linear observation scale: ``log(y**2 + offset)``.

    The offset guards against exact zero returns; it must be >= 0.
    """
    y = np.asarray(y, dtype=float)
    if offset < 0:
        raise ValueError("offset must be >= 0")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    return np.log(y**2 + offset)


@dataclass(frozen=True)
class Prior:
    """Independent priors for one SV equation plus the loading prior.

    mu ~ Normal(m_mu, v_mu), phi ~ Beta(phi_a, phi_b) on (0, 1),
    sigma ~ InverseGamma(sigma_shape, sigma_scale) with mean
    scale/(shape-1), and the free loadings beta ~ Normal(0, beta_scale*I).
    """

    m_mu: float = 0.0
    v_mu: float = 5.0
    phi_a: float = 8.0
    phi_b: float = 0.1
    sigma_shape: float = 2.0
    sigma_scale: float = 0.1
    beta_scale: float = 10.0
    _phi_norm: float = field(init=False, repr=False, default=0.0)
    _sigma_norm: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        for name in ("v_mu", "phi_a", "phi_b", "sigma_shape", "sigma_scale", "beta_scale"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be finite and > 0, got {val}")
        if not np.isfinite(self.m_mu):
            raise ValueError("m_mu must be finite")
        object.__setattr__(self, "_phi_norm", -betaln(self.phi_a, self.phi_b))
        object.__setattr__(
            self,
            "_sigma_norm",
            self.sigma_shape * math.log(self.sigma_scale) - gammaln(self.sigma_shape),
        )

    def log_mu(self, mu: float) -> float:
        return -0.5 * (math.log(2.0 * math.pi * self.v_mu) + (mu - self.m_mu) ** 2 / self.v_mu)

    def log_phi(self, phi: float) -> float:
        if not 0.0 < phi < 1.0:
            return -np.inf
        return (
            self._phi_norm
            + (self.phi_a - 1.0) * math.log(phi)
            + (self.phi_b - 1.0) * math.log1p(-phi)
        )

    def log_sigma(self, sigma: float) -> float:
        if not sigma > 0.0:
            return -np.inf
        return (
            self._sigma_norm
            - (self.sigma_shape + 1.0) * math.log(sigma)
            - self.sigma_scale / sigma
        )

    def log_theta(self, theta) -> float:
        """Joint log prior of (phi, sigma); -inf outside the support."""
        phi, sigma = float(theta[0]), float(theta[1])
        return self.log_phi(phi) + self.log_sigma(sigma)

    def log_sv(self, params: SvParams) -> float:
        return self.log_mu(params.mu) + self.log_phi(params.phi) + self.log_sigma(params.sigma)

    def log_beta(self, beta: np.ndarray) -> float:
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        d = beta.size
        return -0.5 * (
            d * math.log(2.0 * math.pi * self.beta_scale) + beta @ beta / self.beta_scale
        )


@dataclass(frozen=True)
class LatentState:
    """Log-volatility path plus the mixture indicator path (0-based)."""

    h: np.ndarray
    k_idx: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        k = np.asarray(self.k_idx, dtype=np.int64)
        if h.shape != k.shape or h.ndim != 1:
            raise ValueError("h and k_idx must be 1-d with equal length")
        if k.size and (k.min() < 0):
            raise ValueError("indicators must be non-negative")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "k_idx", k)


@dataclass(frozen=True)
class Dataset:
    """Observed return matrix and its log-squared transform.

    ``y`` is T x p (one column per series, mean-adjusted returns) and
    ``z[t, j] = log(y[t, j]**2 + offset)``.
    """

    y: np.ndarray
    z: np.ndarray
    offset: float = DEFAULT_OFFSET

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if y.shape != z.shape or y.shape[0] < 2:
            raise ValueError("y and z must match in shape with T >= 2")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_series(self) -> int:
        return self.y.shape[1]

    @classmethod
    def from_returns(cls, y: np.ndarray, offset: float = DEFAULT_OFFSET) -> "Dataset":
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        return cls(y=y, z=transform_observations(y, offset), offset=offset)
