"""Monte Carlo EM estimation for univariate and factor volatility models.

The E-step replaces the intractable conditional expectation of the
complete-data log-likelihood with an average over Gibbs draws of the
latents; the M-step has closed forms (pooled AR(1) regression for each
volatility equation, cross-product regression for the loading rows).
Convergence is monitored with a bridge-sampling estimate of the
likelihood ratio between successive parameter iterates, which settles to
one from above; large-sample standard errors come from the missing-
information (Louis) decomposition.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import (
    MixtureTable,
    NumericalError,
    SvParams,
    default_mixture_table,
    transform_observations,
)
from .factor import (
    FactorModel,
    free_loading_indices,
    initial_loadings,
    pack_loadings,
    sample_factors,
    unpack_loadings,
)
from .statespace import StateSpaceForm, ffbs_sample, sample_indicators

LOG2PI = math.log(2.0 * math.pi)


@dataclass
class McemConfig:
    """EM schedule: draws per E-step, Gibbs warm-up, iteration count.

    Iterations are fixed rather than stopped automatically; the bridge
    ratio trace is reported for the user's judgment.
    """

    n_draws: int = 100
    gibbs_burn_in: int = 10
    max_iter: int = 25
    seed: int = 0
    offset: float = 1e-7
    weighted_beta: bool = False

    def __post_init__(self):
        if self.n_draws < 1:
            raise ValueError("n_draws must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class LouisResult:
    """Observed-information estimate with standard errors.

    ``positive_definite`` is False when the information estimate needed a
    pseudo-inverse for the standard errors.
    """

    information: np.ndarray
    se: np.ndarray
    positive_definite: bool


@dataclass
class McemTrace:
    """Parameter iterates, bridge ratios and final standard errors."""

    history: np.ndarray
    labels: list[str]
    ratios: np.ndarray
    louis: Optional[LouisResult] = None

    def __post_init__(self):
        if self.ratios.size != self.history.shape[0] - 1:
            raise ValueError("ratio sequence length must be iterations - 1")

    @property
    def final(self) -> dict[str, float]:
        return dict(zip(self.labels, self.history[-1]))

    def final_sv(self, prefix: str = "") -> SvParams:
        f = self.final
        return SvParams(f[f"mu{prefix}"], f[f"phi{prefix}"], f[f"sigma{prefix}"])

    def to_json(self, path) -> None:
        payload = {
            "labels": self.labels,
            "history": self.history.tolist(),
            "ratios": self.ratios.tolist(),
        }
        if self.louis is not None:
            payload["standard_errors"] = dict(zip(self.labels, self.louis.se.tolist()))
            payload["information_positive_definite"] = self.louis.positive_definite
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)

    def ratios_to_csv(self, path) -> None:
        np.savetxt(
            path,
            np.column_stack([np.arange(1, self.ratios.size + 1), self.ratios]),
            delimiter=",",
            header="iteration,likelihood_ratio",
            comments="",
        )


# ---------------------------------------------------------------------------
# complete-data log-likelihood pieces

def ar1_loglik(h: np.ndarray, mu: float, phi: float, sigma: float) -> float:
    """Conditional AR(1) term sum_{t>=2} log N(h_t; mu + phi (h_{t-1}-mu), sigma^2).

    The stationary start-up term is excluded, matching the closed-form
    M-step which conditions on the first point.
    """
    e = h[1:] - mu - phi * (h[:-1] - mu)
    n = e.size
    s2 = sigma * sigma
    if s2 <= 0.0:
        return -np.inf
    return -0.5 * (n * (LOG2PI + math.log(s2)) + float(e @ e) / s2)


def mixture_obs_loglik(
    z: np.ndarray, h: np.ndarray, k_idx: np.ndarray, table: MixtureTable
) -> float:
    """sum_t [log w_{K_t} + log N(z_t; h_t + m_{K_t}, v_{K_t})]."""
    m = table.means[k_idx]
    v = table.variances[k_idx]
    r = z - h - m
    return float(
        np.sum(table.log_weights[k_idx]) - 0.5 * np.sum(np.log(2.0 * np.pi * v) + r * r / v)
    )


def usv_complete_loglik(
    theta: SvParams, z: np.ndarray, h: np.ndarray, k_idx: np.ndarray, table: MixtureTable
) -> float:
    return mixture_obs_loglik(z, h, k_idx, table) + ar1_loglik(h, theta.mu, theta.phi, theta.sigma)


def fmsv_complete_loglik(
    beta: np.ndarray,
    sv: Sequence[SvParams],
    y: np.ndarray,
    f: np.ndarray,
    h: np.ndarray,
    k_idx: np.ndarray,
    table: MixtureTable,
) -> float:
    """log p(y, f, h, K | beta, theta) for the factor model.

    Given the paths, y is exactly Gaussian: the indicator term enters
    only through its prior weights.
    """
    p = y.shape[1]
    k = f.shape[1]
    B = unpack_loadings(beta, p, k)
    resid = y - f @ B.T
    hS = h[:, :p]
    hV = h[:, p:]
    ll = -0.5 * float(np.sum(LOG2PI + hS + resid * resid * np.exp(-hS)))
    if k:
        ll += -0.5 * float(np.sum(LOG2PI + hV + f * f * np.exp(-hV)))
    ll += float(np.sum(table.log_weights[k_idx]))
    for j, params in enumerate(sv):
        ll += ar1_loglik(h[:, j], params.mu, params.phi, params.sigma)
    return ll


# ---------------------------------------------------------------------------
# E-steps

def e_step_sample_usv(
    z: np.ndarray,
    theta_old: SvParams,
    config: McemConfig,
    rng: np.random.Generator,
    table: Optional[MixtureTable] = None,
    h_init: Optional[np.ndarray] = None,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Gibbs draws from p(h, K | z, theta_old).

    Alternates indicator draws and path draws (level held at
    theta_old.mu) for ``gibbs_burn_in`` warm-up sweeps, then collects
    ``n_draws`` states.  Returns the draws and the final path for warm
    starting the next E-step.
    """
    table = table or default_mixture_table()
    h = np.full(z.shape[0], theta_old.mu) if h_init is None else h_init.copy()
    form = StateSpaceForm.centered(theta_old)
    draws = []
    for sweep in range(config.gibbs_burn_in + config.n_draws):
        k_idx = sample_indicators(z, h, table, rng)
        h, _ = ffbs_sample(form, z, k_idx, table, rng)
        if sweep >= config.gibbs_burn_in:
            draws.append((h.copy(), k_idx))
    return draws, h


def e_step_sample_fmsv(
    y: np.ndarray,
    beta: np.ndarray,
    sv: Sequence[SvParams],
    config: McemConfig,
    rng: np.random.Generator,
    table: Optional[MixtureTable] = None,
    state: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> tuple[list[tuple[np.ndarray, np.ndarray, np.ndarray]], tuple[np.ndarray, np.ndarray]]:
    """Gibbs draws of (f, h, K) given the current parameters.

    Sweep order: indicators, then each volatility path with its level
    known, then the factors.
    """
    table = table or default_mixture_table()
    T, p = y.shape
    k = len(sv) - p
    B = unpack_loadings(beta, p, k)
    if state is None:
        h = np.column_stack([np.full(T, params.mu) for params in sv])
        f = sample_factors(y, B, h, rng)
    else:
        f, h = state[0].copy(), state[1].copy()
    forms = [StateSpaceForm.centered(params) for params in sv]
    draws = []
    for sweep in range(config.gibbs_burn_in + config.n_draws):
        resid = y - f @ B.T
        k_idx = np.empty((T, p + k), dtype=np.int64)
        for j in range(p + k):
            series = resid[:, j] if j < p else f[:, j - p]
            z_j = transform_observations(series, config.offset)
            k_idx[:, j] = sample_indicators(z_j, h[:, j], table, rng)
            h[:, j], _ = ffbs_sample(forms[j], z_j, k_idx[:, j], table, rng)
        f = sample_factors(y, B, h, rng)
        if sweep >= config.gibbs_burn_in:
            draws.append((f.copy(), h.copy(), k_idx.copy()))
    return draws, (f, h)


# ---------------------------------------------------------------------------
# M-steps

def m_step_usv(h_draws: np.ndarray) -> SvParams:
    """Closed-form update from pooled AR(1) regression over all draws.

    With pooled means over current and lagged values, phi is the pooled
    regression slope, delta the intercept, sigma^2 the residual mean
    square and mu = delta / (1 - phi).
    """
    H = np.atleast_2d(np.asarray(h_draws, dtype=float))
    M, T = H.shape
    if M * (T - 1) < 3:
        raise ValueError("need at least 3 pooled transitions")
    cur = H[:, 1:]
    lag = H[:, :-1]
    cur_bar = cur.mean()
    lag_bar = lag.mean()
    den = float(np.sum((lag - lag_bar) ** 2))
    if den == 0.0:
        raise NumericalError("lagged path has zero variance; slope undefined")
    phi = float(np.sum((cur - cur_bar) * (lag - lag_bar))) / den
    delta = cur_bar - phi * lag_bar
    sig2 = float(np.mean((cur - delta - phi * lag) ** 2))
    if phi == 1.0:
        raise NumericalError("phi update hit 1; level undefined")
    mu = delta / (1.0 - phi)
    return SvParams(mu=mu, phi=phi, sigma=math.sqrt(max(sig2, 0.0)))


def m_step_beta(
    y: np.ndarray,
    draws: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    k: int,
    weighted: bool = False,
) -> np.ndarray:
    """Row-wise loading update from pooled cross-products.

    Row i regresses y*_i on f*: for i > k the full factor vector, for
    2 <= i <= k only the leading i-1 factors with the constrained part
    moved to the left side.  ``weighted`` applies exp(-h) weights, the
    exact maximizer of the Gaussian objective; the unweighted form is
    the printed update and the default.
    """
    T, p = y.shape
    B = np.zeros((p, k))
    for i in range(min(p, k)):
        B[i, i] = 1.0
    for i in range(1, p):
        cols = list(range(min(i, k)))
        m = len(cols)
        if m == 0:
            continue
        A = np.zeros((m, m))
        c = np.zeros(m)
        for f, h, _ in draws:
            fs = f[:, cols]
            if i < k:
                target = y[:, i] - f[:, i]
            else:
                target = y[:, i]
            if weighted:
                w = np.exp(-h[:, i])
                A += fs.T @ (fs * w[:, None])
                c += fs.T @ (target * w)
            else:
                A += fs.T @ fs
                c += fs.T @ target
        try:
            B[i, cols] = np.linalg.solve(A, c)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular cross-product in loading row {i}") from exc
    return pack_loadings(B)


# ---------------------------------------------------------------------------
# bridge-sampling convergence monitor

def bridge_ratio(
    complete_loglik,
    theta_i,
    theta_im1,
    draws_i: Sequence,
    draws_im1: Sequence,
) -> float:
    """Likelihood-ratio estimate p(y|theta_i) / p(y|theta_im1).

    Square-root-weighted bridge estimator over the two draw sets;
    ``complete_loglik(theta, draw)`` evaluates the complete-data
    log-likelihood.  At equal parameters the ratio is exactly one.
    """
    num_terms = []
    for draw in draws_im1:
        li = complete_loglik(theta_i, draw)
        lim1 = complete_loglik(theta_im1, draw)
        if not (np.isfinite(li) and np.isfinite(lim1)):
            raise NumericalError("non-finite complete-data likelihood in bridge ratio")
        num_terms.append(0.5 * (li - lim1))
    den_terms = []
    for draw in draws_i:
        li = complete_loglik(theta_i, draw)
        lim1 = complete_loglik(theta_im1, draw)
        if not (np.isfinite(li) and np.isfinite(lim1)):
            raise NumericalError("non-finite complete-data likelihood in bridge ratio")
        den_terms.append(0.5 * (lim1 - li))
    return float(np.exp(logsumexp(num_terms) - logsumexp(den_terms)))


# ---------------------------------------------------------------------------
# Louis information

def _ar1_score_hess(h: np.ndarray, mu: float, phi: float, sigma: float):
    """Analytic score and Hessian of the conditional AR(1) term in
    (mu, phi, sigma)."""
    e = h[1:] - mu - phi * (h[:-1] - mu)
    x = h[:-1] - mu
    n = e.size
    s2 = sigma * sigma
    se_ = np.array(
        [
            (1.0 - phi) * e.sum() / s2,
            float(e @ x) / s2,
            -n / sigma + float(e @ e) / sigma**3,
        ]
    )
    H = np.empty((3, 3))
    H[0, 0] = -n * (1.0 - phi) ** 2 / s2
    H[0, 1] = H[1, 0] = (-(1.0 - phi) * x.sum() - e.sum()) / s2
    H[0, 2] = H[2, 0] = -2.0 * (1.0 - phi) * e.sum() / sigma**3
    H[1, 1] = -float(x @ x) / s2
    H[1, 2] = H[2, 1] = -2.0 * float(e @ x) / sigma**3
    H[2, 2] = n / s2 - 3.0 * float(e @ e) / sigma**4
    return se_, H


def _louis_from_scores(scores: np.ndarray, hessians: np.ndarray) -> LouisResult:
    """Combine per-draw scores/Hessians into the missing-information
    estimate: -mean(H) - mean(s s') + mean(s) mean(s)'."""
    sbar = scores.mean(axis=0)
    outer = np.einsum("mi,mj->ij", scores, scores) / scores.shape[0]
    info = -hessians.mean(axis=0) - outer + np.outer(sbar, sbar)
    info = 0.5 * (info + info.T)
    try:
        cov = np.linalg.inv(info)
        pd = bool(np.all(np.linalg.eigvalsh(info) > 0) and np.all(np.diag(cov) > 0))
    except np.linalg.LinAlgError:
        pd = False
    if not pd:
        cov = np.linalg.pinv(info)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))
    return LouisResult(information=info, se=se, positive_definite=pd)


def louis_information(h_draws: np.ndarray, theta: SvParams) -> LouisResult:
    """Observed-information estimate for one volatility equation."""
    H = np.atleast_2d(np.asarray(h_draws, dtype=float))
    M = H.shape[0]
    scores = np.empty((M, 3))
    hessians = np.empty((M, 3, 3))
    for j in range(M):
        scores[j], hessians[j] = _ar1_score_hess(H[j], theta.mu, theta.phi, theta.sigma)
    return _louis_from_scores(scores, hessians)


def louis_information_fmsv(
    draws: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    beta: np.ndarray,
    sv: Sequence[SvParams],
    y: np.ndarray,
) -> LouisResult:
    """Observed information over the stacked (beta, all theta) vector.

    Cross-parameter second derivatives vanish by the additive structure
    of the complete-data likelihood; the score outer products supply the
    missing-information coupling.
    """
    T, p = y.shape
    n = len(sv)
    k = n - p
    free = free_loading_indices(p, k)
    d = len(free)
    q = d + 3 * n
    M = len(draws)
    scores = np.zeros((M, q))
    hessians = np.zeros((M, q, q))
    B = unpack_loadings(beta, p, k)
    row_slots: dict[int, list[int]] = {}
    for slot, (i, j) in enumerate(free):
        row_slots.setdefault(i, []).append(slot)
    for m, (f, h, _) in enumerate(draws):
        resid = y - f @ B.T
        for i, slots in row_slots.items():
            cols = [free[s][1] for s in slots]
            fs = f[:, cols]
            w = np.exp(-h[:, i])
            scores[m, slots] = fs.T @ (resid[:, i] * w)
            hessians[m][np.ix_(slots, slots)] = -fs.T @ (fs * w[:, None])
        for j in range(n):
            sl = slice(d + 3 * j, d + 3 * j + 3)
            s_j, H_j = _ar1_score_hess(h[:, j], sv[j].mu, sv[j].phi, sv[j].sigma)
            scores[m, sl] = s_j
            hessians[m][sl, sl] = H_j
    return _louis_from_scores(scores, hessians)


# ---------------------------------------------------------------------------
# drivers

def _init_usv_theta(z: np.ndarray, table: MixtureTable) -> SvParams:
    # E[z] = mu + E[mixture]; match the level, start persistence high
    mu0 = float(z.mean() - table.moments()[0])
    return SvParams(mu=mu0, phi=0.9, sigma=0.2)


def run_mcem_usv(
    y: np.ndarray,
    config: Optional[McemConfig] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
) -> McemTrace:
    """EM path for the univariate model; returns the iterate history,
    bridge-ratio trace and Louis standard errors at the final estimate."""
    config = config or McemConfig()
    table = table or default_mixture_table()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    y = np.asarray(y, dtype=float).ravel()
    z = transform_observations(y, config.offset)

    def complete_ll(theta: SvParams, draw):
        h, k_idx = draw
        return usv_complete_loglik(theta, z, h, k_idx, table)

    theta = _init_usv_theta(z, table)
    history = [theta.as_array()]
    ratios = []
    prev_draws = None
    prev_theta = None
    h_state = None
    draws = None
    for _ in range(config.max_iter):
        draws, h_state = e_step_sample_usv(z, theta, config, rng, table, h_init=h_state)
        if prev_draws is not None:
            ratios.append(bridge_ratio(complete_ll, theta, prev_theta, draws, prev_draws))
        prev_draws, prev_theta = draws, theta
        theta = m_step_usv(np.array([h for h, _ in draws]))
        history.append(theta.as_array())
    louis = louis_information(np.array([h for h, _ in draws]), theta)
    return McemTrace(
        history=np.array(history[1:]),
        labels=["mu", "phi", "sigma"],
        ratios=np.array(ratios),
        louis=louis,
    )


def run_mcem_fmsv(
    y: np.ndarray,
    k: int,
    config: Optional[McemConfig] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
) -> McemTrace:
    """EM path for the factor model.

    Per iteration: Gibbs draws of (f, h, K), then the closed-form loading
    and per-series AR(1) updates.  History columns follow the chain
    labeling: free loadings first, then per-series (mu, phi, sigma).
    """
    config = config or McemConfig()
    table = table or default_mixture_table()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, p = y.shape
    if not 1 <= k <= p:
        raise ValueError("need 1 <= k <= p")
    n = p + k

    f0, B0 = initial_loadings(y, k)
    beta = pack_loadings(B0)
    resid0 = y - f0 @ B0.T
    mix_mean = table.moments()[0]
    sv = []
    for j in range(n):
        series = resid0[:, j] if j < p else f0[:, j - p]
        z_j = transform_observations(series, config.offset)
        sv.append(SvParams(mu=float(z_j.mean() - mix_mean), phi=0.9, sigma=0.2))

    def pack_params(beta_vec, sv_list):
        return np.concatenate(
            [beta_vec, np.ravel([[s.mu, s.phi, s.sigma] for s in sv_list])]
        )

    def complete_ll(params, draw):
        beta_vec, sv_list = params
        f, h, k_idx = draw
        return fmsv_complete_loglik(beta_vec, sv_list, y, f, h, k_idx, table)

    history = [pack_params(beta, sv)]
    ratios = []
    prev_draws = None
    prev_params = None
    state = None
    draws = None
    for _ in range(config.max_iter):
        draws, state = e_step_sample_fmsv(y, beta, sv, config, rng, table, state=state)
        if prev_draws is not None:
            ratios.append(
                bridge_ratio(complete_ll, (beta, sv), prev_params, draws, prev_draws)
            )
        prev_draws, prev_params = draws, (beta, list(sv))
        beta = m_step_beta(y, draws, k, weighted=config.weighted_beta)
        sv = [
            m_step_usv(np.array([h[:, j] for _, h, _ in draws]))
            for j in range(n)
        ]
        history.append(pack_params(beta, sv))
    louis = louis_information_fmsv(draws, beta, sv, y)
    labels = [f"b{i + 1}_{j + 1}" for i, j in free_loading_indices(p, k)]
    for j in range(n):
        name = f"y{j + 1}" if j < p else f"f{j - p + 1}"
        labels += [f"mu_{name}", f"phi_{name}", f"sigma_{name}"]
    return McemTrace(
        history=np.array(history[1:]),
        labels=labels,
        ratios=np.array(ratios),
        louis=louis,
    )
