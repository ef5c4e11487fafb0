"""Marginal likelihood estimation for factor-count selection.

log p(y) = log p(y | theta*, beta*) + log p(theta*, beta*)
           - log p(beta* | y) - log p(theta* | y, beta*)

evaluated at componentwise posterior medians: the likelihood term by
auxiliary particle filtering with the factors integrated out per time
point, the loading ordinate by a normal approximation fitted to the
estimation chain, and the volatility-parameter ordinate by a Gaussian
copula fitted to reduced runs in which the loadings (and previously
fixed parameter blocks) are held at their ordinate values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, ndtri

from .chain import Chain, McmcConfig
from .core import MixtureTable, NumericalError, Prior, SvParams
from .factor import run_fmsv_chain, unpack_loadings
from .usv import run_usv_chain

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class ApfConfig:
    """Particle counts: n_particles propagated, n_first_stage >= that for
    the look-ahead resampling stage."""

    n_particles: int = 10_000
    n_first_stage: int = 20_000

    def __post_init__(self):
        if not 1 <= self.n_particles <= self.n_first_stage:
            raise ValueError("need n_first_stage >= n_particles >= 1")


@dataclass(frozen=True)
class OrdinatePoint:
    """Componentwise posterior medians used as the evaluation point."""

    sv: tuple[SvParams, ...]
    beta: np.ndarray


def _systematic_resample(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions).clip(max=weights.size - 1)


def _ess(w: np.ndarray) -> float:
    s = w.sum()
    return float(s * s / (w @ w))


def auxiliary_particle_filter_loglik(
    obs_loglik: Callable[[int, np.ndarray], np.ndarray],
    mu: np.ndarray,
    phi: np.ndarray,
    sigma: np.ndarray,
    T: int,
    config: ApfConfig,
    rng: np.random.Generator,
) -> float:
    """Log-likelihood of a state-space model with independent AR(1)
    latents by the two-resampling auxiliary particle filter.

    ``obs_loglik(t, H)`` evaluates log p(y_t | h_t) for the rows of H.
    First stage: particles are scored at their conditional-mean
    prediction and resampled to the larger first-stage count; second
    stage: propagated particles are reweighted by the ratio of actual to
    predicted observation density and resampled back.  Per step the
    likelihood factor is (mean first-stage weight) x (mean second-stage
    weight).  Raises on weight degeneracy (effective sample size < 2).
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    M, R = config.n_particles, config.n_first_stage
    stat_sd = np.sqrt(sigma**2 / (1.0 - phi**2))
    X = mu + stat_sd * rng.standard_normal((M, mu.size))

    lw = obs_loglik(0, X)
    c = float(lw.max())
    w = np.exp(lw - c)
    if _ess(w) < 2.0:
        raise NumericalError("particle weights degenerate at t=0")
    ll = c + math.log(float(w.mean()))
    X = X[_systematic_resample(w / w.sum(), M, rng)]

    for t in range(1, T):
        pred = mu + phi * (X - mu)
        lg = obs_loglik(t, pred)
        c1 = float(lg.max())
        g = np.exp(lg - c1)
        if _ess(g) < 2.0:
            raise NumericalError(f"first-stage weights degenerate at t={t}")
        ll += c1 + math.log(float(g.mean()))
        anc = _systematic_resample(g / g.sum(), R, rng)
        Xp = mu + phi * (X[anc] - mu) + sigma * rng.standard_normal((R, mu.size))
        lw2 = obs_loglik(t, Xp) - lg[anc]
        c2 = float(lw2.max())
        w2 = np.exp(lw2 - c2)
        if _ess(w2) < 2.0:
            raise NumericalError(f"second-stage weights degenerate at t={t}")
        ll += c2 + math.log(float(w2.mean()))
        X = Xp[_systematic_resample(w2 / w2.sum(), M, rng)]
    return float(ll)


def _fmsv_obs_loglik(y: np.ndarray, B: np.ndarray) -> Callable[[int, np.ndarray], np.ndarray]:
    """Per-particle log N(y_t; 0, B V B' + S) via the Woodbury identity."""
    p, k = B.shape
    idx = np.arange(k)

    def obs(t: int, H: np.ndarray) -> np.ndarray:
        hS = H[:, :p]
        sinv = np.exp(-hS)
        q = (y[t] ** 2 * sinv).sum(axis=1)
        sumh = H.sum(axis=1)
        base = -0.5 * (p * LOG2PI + sumh + q)
        if k == 0:
            return base
        hV = H[:, p:]
        r = (y[t] * sinv) @ B
        A = np.einsum("ni,ij,il->njl", sinv, B, B)
        A[:, idx, idx] += np.exp(-hV)
        L = np.linalg.cholesky(A)
        logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
        sol = np.linalg.solve(L, r[..., None])[..., 0]
        quad = (sol**2).sum(axis=1)
        return base - 0.5 * (logdet - quad)

    return obs


def apf_loglik(
    y: np.ndarray,
    sv: Sequence[SvParams],
    B: np.ndarray,
    config: ApfConfig,
    rng: np.random.Generator,
) -> float:
    """Estimate log p(y | theta, beta), the factors integrated out
    analytically at each time point."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if len(sv) != sum(B.shape):
        raise ValueError("need one parameter set per observed series and factor")
    mu = np.array([s.mu for s in sv])
    phi = np.array([s.phi for s in sv])
    sigma = np.array([s.sigma for s in sv])
    return auxiliary_particle_filter_loglik(
        _fmsv_obs_loglik(y, B), mu, phi, sigma, y.shape[0], config, rng
    )


# ---------------------------------------------------------------------------
# posterior ordinates

def _silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        raise NumericalError("degenerate marginal sample; bandwidth undefined")
    return 0.9 * spread * n ** (-0.2)


def kde_log_density(x: np.ndarray, point: float) -> float:
    """Gaussian kernel density estimate with Silverman's bandwidth."""
    x = np.asarray(x, dtype=float)
    h = _silverman_bandwidth(x)
    z = (point - x) / h
    return float(logsumexp(-0.5 * z * z) - math.log(x.size * h) - 0.5 * LOG2PI)


def estimate_copula_correlation(samples: np.ndarray) -> tuple[np.ndarray, float]:
    """Copula correlation from normal scores of within-column ranks.

    Shrinks toward the identity in 5% steps until positive definite;
    returns (C, shrinkage used).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, q = samples.shape
    ranks = samples.argsort(axis=0).argsort(axis=0) + 1.0
    eta = ndtri((ranks - 0.5) / n)
    C0 = np.corrcoef(eta.T) if q > 1 else np.ones((1, 1))
    C0 = np.atleast_2d(C0)
    lam = 0.0
    C = C0
    while np.linalg.eigvalsh(C)[0] <= 1e-10:
        lam = min(lam + 0.05, 1.0)
        C = (1.0 - lam) * C0 + lam * np.eye(q)
        if lam >= 1.0:
            break
    return C, lam


def copula_ordinate_at_median(
    samples: np.ndarray, point: np.ndarray, rank_tol: float = 0.05
) -> float:
    """Log posterior ordinate at the componentwise median.

    At the median every normal score is zero, so the Gaussian-copula
    density reduces to |C|^{-1/2} times the product of marginal kernel
    density estimates.  ``point`` must actually be the componentwise
    median of ``samples`` (checked by rank within ``rank_tol``).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    point = np.atleast_1d(np.asarray(point, dtype=float))
    n, q = samples.shape
    if point.size != q:
        raise ValueError("point dimension must match sample columns")
    below = (samples < point).mean(axis=0)
    if np.any(np.abs(below - 0.5) > rank_tol):
        raise ValueError("point is not the componentwise median of the samples")
    C, _ = estimate_copula_correlation(samples)
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0:
        raise NumericalError("copula correlation not positive definite after shrinkage")
    marg = sum(kde_log_density(samples[:, j], point[j]) for j in range(q))
    return float(-0.5 * logdet + marg)


def copula_log_density(samples: np.ndarray, point: np.ndarray) -> float:
    """General Gaussian-copula density estimate at an arbitrary point.

    Kept for validation; the selection workflow only evaluates at the
    median, where the quadratic correction vanishes.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    point = np.atleast_1d(np.asarray(point, dtype=float))
    n, q = samples.shape
    C, _ = estimate_copula_correlation(samples)
    sign, logdet = np.linalg.slogdet(C)
    if sign <= 0:
        raise NumericalError("copula correlation not positive definite after shrinkage")
    cdf = np.clip((samples < point).mean(axis=0), 0.5 / n, 1.0 - 0.5 / n)
    eta = ndtri(cdf)
    quad = 0.5 * float(eta @ (eta - np.linalg.solve(C, eta)))
    marg = sum(kde_log_density(samples[:, j], point[j]) for j in range(q))
    return float(-0.5 * logdet + quad + marg)


def normal_ordinate(iterates: np.ndarray, point: np.ndarray) -> float:
    """Log density of ``point`` under a normal fitted to the iterates."""
    X = np.atleast_2d(np.asarray(iterates, dtype=float))
    point = np.atleast_1d(np.asarray(point, dtype=float))
    n, d = X.shape
    if n < d + 2:
        raise ValueError(f"need at least {d + 2} iterates for a {d}-dim normal ordinate")
    mean = X.mean(axis=0)
    cov = np.cov(X.T, ddof=1)
    cov = np.atleast_2d(cov)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-8 * np.eye(d)
        L = np.linalg.cholesky(cov)
    sol = np.linalg.solve(L, point - mean)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    return float(-0.5 * (d * LOG2PI + logdet + sol @ sol))


# ---------------------------------------------------------------------------
# reduced runs and the full workflow

def reduced_mcmc(
    y: np.ndarray,
    k: int,
    beta_star: np.ndarray,
    prior: Prior,
    config: McmcConfig,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
    fixed_sv: Optional[dict[int, SvParams]] = None,
) -> Chain:
    """Posterior run with the loadings (and optionally some volatility
    parameter sets) frozen at their ordinate values.

    With k = 0 there are no loadings to freeze and the run is exactly
    the univariate sampler.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if k == 0:
        if y.shape[1] != 1:
            raise ValueError("k = 0 reduced run expects a single series")
        return run_usv_chain(y[:, 0], prior, config, rng=rng, table=table)
    chain, _ = run_fmsv_chain(
        y, k, prior, config, rng=rng, table=table,
        freeze_beta=np.asarray(beta_star, dtype=float),
        fixed_sv=fixed_sv or {},
    )
    return chain


def _series_names(p: int, k: int) -> list[str]:
    return [f"y{j + 1}" for j in range(p)] + [f"f{j + 1}" for j in range(k)]


def _theta_columns(chain: Chain, names: Sequence[str]) -> np.ndarray:
    cols = []
    for name in names:
        for stat in ("mu", "phi", "sigma"):
            cols.append(chain.param(f"{stat}_{name}"))
    return np.column_stack(cols)


@dataclass
class MarglikResult:
    """Four-term decomposition of one marginal-likelihood evaluation."""

    k: int
    log_lik: float
    log_prior: float
    log_beta_ordinate: float
    log_theta_ordinate: float
    ordinate: OrdinatePoint
    copula_shrinkage: float = 0.0

    @property
    def log_marginal(self) -> float:
        return (
            self.log_lik + self.log_prior - self.log_beta_ordinate - self.log_theta_ordinate
        )

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "log_likelihood": self.log_lik,
            "log_prior": self.log_prior,
            "log_beta_ordinate": self.log_beta_ordinate,
            "log_theta_ordinate": self.log_theta_ordinate,
            "log_marginal_likelihood": self.log_marginal,
            "copula_shrinkage": self.copula_shrinkage,
        }


def chib_log_marginal_likelihood(
    y: np.ndarray,
    k: int,
    prior: Optional[Prior] = None,
    est_config: Optional[McmcConfig] = None,
    reduced_config: Optional[McmcConfig] = None,
    apf_config: Optional[ApfConfig] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
    ordinate_blocks: int = 1,
    est_chain: Optional[Chain] = None,
) -> MarglikResult:
    """Full marginal-likelihood evaluation for a k-factor model.

    Runs the estimation chain (unless provided), takes beta* as the
    componentwise median of its loading iterates, fits the normal
    ordinate for beta*, then runs ``ordinate_blocks`` reduced chains to
    obtain theta* (series are grouped in order; each block's parameters
    are taken from and evaluated in the run where they are free, then
    frozen for subsequent runs).  The likelihood term is the particle
    filter estimate at (theta*, beta*).
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, p = y.shape
    if k < 1:
        raise ValueError("factor-count selection needs k >= 1")
    prior = prior or Prior()
    est_config = est_config or McmcConfig()
    reduced_config = reduced_config or est_config
    apf_config = apf_config or ApfConfig()
    rng = rng if rng is not None else np.random.default_rng(est_config.seed)
    est_rng, red_rng, apf_rng = rng.spawn(3)

    if est_chain is None:
        est_chain, _ = run_fmsv_chain(y, k, prior, est_config, rng=est_rng, table=table)
    beta_labels = [lab for lab in est_chain.labels if lab.startswith("b")]
    beta_iters = np.column_stack([est_chain.param(lab) for lab in beta_labels])
    beta_star = np.median(beta_iters, axis=0)
    log_beta_ord = normal_ordinate(beta_iters, beta_star)

    names = _series_names(p, k)
    groups = np.array_split(np.arange(p + k), max(1, ordinate_blocks))
    fixed: dict[int, SvParams] = {}
    log_theta_ord = 0.0
    shrinkage = 0.0
    theta_star: list[Optional[SvParams]] = [None] * (p + k)
    for g, group in enumerate(groups):
        chain_g = reduced_mcmc(
            y, k, beta_star, prior, reduced_config,
            rng=red_rng.spawn(1)[0], table=table, fixed_sv=dict(fixed),
        )
        group_names = [names[j] for j in group]
        samples = _theta_columns(chain_g, group_names)
        point = np.median(samples, axis=0)
        _, lam = estimate_copula_correlation(samples)
        shrinkage = max(shrinkage, lam)
        log_theta_ord += copula_ordinate_at_median(samples, point)
        for idx, j in enumerate(group):
            params = SvParams(*point[3 * idx: 3 * idx + 3])
            theta_star[j] = params
            fixed[j] = params

    sv_star = tuple(theta_star)  # type: ignore[arg-type]
    log_prior = float(sum(prior.log_sv(s) for s in sv_star) + prior.log_beta(beta_star))
    B_star = unpack_loadings(beta_star, p, k)
    log_lik = apf_loglik(y, sv_star, B_star, apf_config, apf_rng)
    return MarglikResult(
        k=k,
        log_lik=log_lik,
        log_prior=log_prior,
        log_beta_ordinate=log_beta_ord,
        log_theta_ordinate=log_theta_ord,
        ordinate=OrdinatePoint(sv=sv_star, beta=beta_star),
        copula_shrinkage=shrinkage,
    )
