"""Latent-factor multivariate stochastic volatility model.

Observed returns y_t = B f_t + S_t^{1/2} e_t with serially independent
factors f_t = V_t^{1/2} u_t; every idiosyncratic shock and every factor
carries its own AR(1) log-volatility.  Identification pins B[i, i] = 1
for i <= k and B[i, j] = 0 for j > i, leaving d = p*k - k*(k+1)/2 free
loadings.

Given (B, f) the model decomposes into p + k independent univariate
volatility equations, which the sampler updates with the same machinery
as the univariate case (optionally in parallel, one RNG stream per
series; results are independent of thread scheduling).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .chain import BlockStats, Chain, McmcConfig, make_builder, mh_block_update
from .core import (
    Dataset,
    MixtureTable,
    NumericalError,
    Prior,
    SvParams,
    default_mixture_table,
    transform_observations,
)
from .proposals import AdaptiveRwState
from .statespace import StateSpaceForm, ffbs_sample, sample_indicators
from .usv import initial_path, sv_theta_step


def free_loading_indices(p: int, k: int) -> list[tuple[int, int]]:
    """Row-major positions of the unconstrained entries of B."""
    idx = []
    for i in range(p):
        for j in range(k):
            if i < k:
                if j < i:
                    idx.append((i, j))
            else:
                idx.append((i, j))
    return idx


@dataclass(frozen=True)
class FactorModel:
    """Loading matrix plus the p + k volatility parameter sets.

    ``sv[:p]`` belong to the idiosyncratic shocks, ``sv[p:]`` to the
    factors.
    """

    B: np.ndarray
    sv: tuple[SvParams, ...]

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        p, k = B.shape
        if len(self.sv) != p + k:
            raise ValueError(f"need {p + k} volatility parameter sets, got {len(self.sv)}")
        for i in range(min(p, k)):
            if B[i, i] != 1.0:
                raise ValueError(f"identification requires B[{i},{i}] = 1")
            for j in range(i + 1, k):
                if B[i, j] != 0.0:
                    raise ValueError(f"identification requires B[{i},{j}] = 0")
        B = B.copy()
        B.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sv", tuple(self.sv))

    @property
    def p(self) -> int:
        return self.B.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def n_free(self) -> int:
        return self.p * self.k - self.k * (self.k + 1) // 2

    def free_values(self) -> np.ndarray:
        return pack_loadings(self.B)


def pack_loadings(B: np.ndarray) -> np.ndarray:
    p, k = B.shape
    idx = free_loading_indices(p, k)
    return np.array([B[i, j] for i, j in idx])


def unpack_loadings(beta: np.ndarray, p: int, k: int) -> np.ndarray:
    """Assemble B from free values, writing the identification pattern."""
    B = np.zeros((p, k))
    for i in range(min(p, k)):
        B[i, i] = 1.0
    idx = free_loading_indices(p, k)
    if len(beta) != len(idx):
        raise ValueError(f"expected {len(idx)} free loadings, got {len(beta)}")
    for val, (i, j) in zip(beta, idx):
        B[i, j] = val
    return B


@dataclass
class FactorPaths:
    """Latent paths: factors (T x k), log-vols (T x (p+k)), indicators."""

    f: np.ndarray
    h: np.ndarray
    k_idx: Optional[np.ndarray] = None


def simulate_fmsv(
    model: FactorModel, T: int, rng: np.random.Generator
) -> tuple[Dataset, FactorPaths]:
    """Exact forward simulation; returns ground-truth latents."""
    p, k = model.p, model.k
    n = p + k
    h = np.empty((T, n))
    for j, sv in enumerate(model.sv):
        h[0, j] = sv.mu + np.sqrt(sv.stationary_var) * rng.standard_normal()
        eta = rng.standard_normal(T - 1)
        for t in range(1, T):
            h[t, j] = sv.mu + sv.phi * (h[t - 1, j] - sv.mu) + sv.sigma * eta[t - 1]
    f = np.exp(0.5 * h[:, p:]) * rng.standard_normal((T, k)) if k else np.zeros((T, 0))
    e = np.exp(0.5 * h[:, :p]) * rng.standard_normal((T, p))
    y = f @ model.B.T + e
    return Dataset.from_returns(y), FactorPaths(f=f, h=h)


def _factor_lik_inputs(y: np.ndarray, h: np.ndarray, p: int, k: int):
    """Precompute the B-independent pieces of the integrated likelihood."""
    hS = h[:, :p]
    hV = h[:, p:]
    sinv = np.exp(-hS)
    ysinv = y * sinv
    qs = np.einsum("ti,ti->t", y, ysinv)
    sumh = hS.sum(axis=1) + hV.sum(axis=1)
    vinv = np.exp(-hV)
    return (
        np.ascontiguousarray(sinv),
        np.ascontiguousarray(ysinv),
        np.ascontiguousarray(qs),
        np.ascontiguousarray(sumh),
        np.ascontiguousarray(vinv),
    )


def integrated_loglik(y: np.ndarray, h: np.ndarray, B: np.ndarray) -> float:
    """log p(y | B, h): factors integrated out, per time point
    y_t ~ N(0, B V_t B' + S_t)."""
    p, k = B.shape
    inputs = _factor_lik_inputs(y, h, p, k)
    ll = _kernels.factor_loglik(np.ascontiguousarray(B, dtype=float), *inputs)
    if np.isnan(ll):
        raise NumericalError("integrated likelihood failed (non-PD per-time covariance)")
    return float(ll)


def sample_factors(
    y: np.ndarray, B: np.ndarray, h: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Draw f ~ p(f | y, B, h).

    Given the log-volatilities the factors are serially independent, so
    the draw factorizes over time:
    f_t ~ N(Sig_t B' S_t^{-1} y_t, Sig_t), Sig_t = (B' S_t^{-1} B + V_t^{-1})^{-1}.
    """
    p, k = B.shape
    if k == 0:
        return np.zeros((y.shape[0], 0))
    sinv = np.exp(-h[:, :p])
    vinv = np.exp(-h[:, p:])
    if not (np.all(np.isfinite(sinv)) and np.all(np.isfinite(vinv))):
        raise NumericalError("singular volatility matrix in factor draw")
    A = np.einsum("ti,ij,il->tjl", sinv, B, B)
    A[:, np.arange(k), np.arange(k)] += vinv
    rhs = np.einsum("ij,ti->tj", B, y * sinv)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("factor precision not positive definite") from exc
    mean = np.linalg.solve(A, rhs[..., None])[..., 0]
    eps = rng.standard_normal((y.shape[0], k))
    # A = L L'  =>  solving L' x = eps gives Cov(x) = A^{-1}
    noise = np.linalg.solve(np.transpose(L, (0, 2, 1)), eps[..., None])[..., 0]
    return mean + noise


def _beta_blocks(d: int, block_size: int) -> list[np.ndarray]:
    """Consecutive index blocks; every free loading in exactly one."""
    if d == 0:
        return []
    starts = range(0, d, block_size)
    return [np.arange(s, min(s + block_size, d)) for s in starts]


def sample_beta(
    y: np.ndarray,
    h: np.ndarray,
    beta: np.ndarray,
    p: int,
    k: int,
    prior: Prior,
    config: McmcConfig,
    rw_states: Sequence[AdaptiveRwState],
    rng: np.random.Generator,
    stats: Sequence[BlockStats],
) -> np.ndarray:
    """Block-wise MH update of the free loadings targeting p(beta | y, h).

    Blocks are updated in a fixed sweep, each conditioned on the current
    values of the others.  Proposals are built on the log posterior of
    the block (the N(0, c I) prior curvature is negligible but keeps the
    objective proper).
    """
    beta = np.asarray(beta, dtype=float).copy()
    d = beta.size
    inputs = _factor_lik_inputs(y, h, p, k)
    blocks = _beta_blocks(d, config.beta_block_size)

    def full_loglik(vec):
        B = unpack_loadings(vec, p, k)
        ll = _kernels.factor_loglik(np.ascontiguousarray(B), *inputs)
        if np.isnan(ll):
            raise NumericalError("integrated likelihood failed during beta update")
        return float(ll)

    for b, block in enumerate(blocks):
        def loglik(vals, _block=block):
            vec = beta.copy()
            vec[_block] = vals
            return full_loglik(vec)

        def logprior(vals):
            return float(prior.log_beta(vals))

        def objective(vals, _loglik=loglik, _logprior=logprior):
            return _loglik(vals) + _logprior(vals)

        build = make_builder(objective, config)
        try:
            new_vals, _ = mh_block_update(
                beta[block], loglik, logprior, build, config.method,
                rw_states[b], rng, stats[b],
            )
        except NumericalError as exc:
            raise NumericalError(f"beta block {b}: {exc}") from exc
        beta[block] = new_vals
        rw_states[b].update(new_vals)
    return beta


def initial_loadings(y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Principal-component factor estimates and constrained OLS loadings."""
    T, p = y.shape
    cov = np.cov(y.T)
    vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
    order = np.argsort(vals)[::-1]
    V = vecs[:, order[:k]]
    f0 = y @ V
    for j in range(k):
        denom = float(f0[:, j] @ f0[:, j])
        if denom > 0:
            scale = float(f0[:, j] @ y[:, j]) / denom
            if abs(scale) > 1e-8:
                f0[:, j] = f0[:, j] * scale
    B = np.zeros((p, k))
    for i in range(min(p, k)):
        B[i, i] = 1.0
    for i in range(p):
        if i < k:
            cols = list(range(i))
            target = y[:, i] - f0[:, i]
        else:
            cols = list(range(k))
            target = y[:, i]
        if cols:
            X = f0[:, cols]
            coef, *_ = np.linalg.lstsq(X, target, rcond=None)
            B[i, cols] = coef
    return f0, B


def _series_label(j: int, p: int) -> str:
    return f"y{j + 1}" if j < p else f"f{j - p + 1}"


def run_fmsv_chain(
    y: np.ndarray,
    k: int,
    prior: Optional[Prior] = None,
    config: Optional[McmcConfig] = None,
    rng: Optional[np.random.Generator] = None,
    table: Optional[MixtureTable] = None,
    freeze_beta: Optional[np.ndarray] = None,
    fixed_sv: Optional[dict[int, SvParams]] = None,
    init_beta: Optional[np.ndarray] = None,
    init_sv: Optional[Sequence[SvParams]] = None,
) -> tuple[Chain, FactorPaths]:
    """Sample the factor-model posterior.

    Each sweep: free loadings block-wise (with the factors integrated
    out), then the factor paths, then per series the indicators, the
    (phi, sigma) block and the volatility path with its level.

    ``freeze_beta`` holds the loadings fixed (reduced runs for marginal
    likelihood); ``fixed_sv`` pins (mu, phi, sigma) for selected series,
    whose paths are then drawn with the level known.  ``init_beta`` /
    ``init_sv`` warm-start the chain (e.g. from EM estimates).

    Returns the chain over (free loadings, all mu/phi/sigma) and the
    final latent paths.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    T, p = y.shape
    if k < 0 or (k >= 1 and p < k):
        raise ValueError("need p >= k >= 1 for a factor model")
    prior = prior or Prior()
    config = config or McmcConfig()
    table = table or default_mixture_table()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    fixed_sv = fixed_sv or {}

    if k == 0:
        raise ValueError("k = 0 has no loadings; fit each column with the univariate sampler")

    n = p + k
    d = p * k - k * (k + 1) // 2
    f0, B0 = initial_loadings(y, k)
    if freeze_beta is not None:
        beta = np.asarray(freeze_beta, dtype=float).copy()
    elif init_beta is not None:
        beta = np.asarray(init_beta, dtype=float).copy()
    else:
        beta = pack_loadings(B0)
    B = unpack_loadings(beta, p, k)
    f = f0.copy()

    if init_sv is not None:
        theta = np.array([[sv.phi, sv.sigma] for sv in init_sv], dtype=float)
        h = np.column_stack(
            [np.full(T, sv.mu) for sv in init_sv]
        )
    else:
        theta = np.tile([0.9, 0.2], (n, 1))
        resid = y - f @ B.T
        h = np.column_stack(
            [initial_path(resid[:, j]) for j in range(p)]
            + [initial_path(f[:, j]) for j in range(k)]
        )
    mu = np.full(n, prior.m_mu)
    for j, sv in fixed_sv.items():
        theta[j] = (sv.phi, sv.sigma)
        mu[j] = sv.mu

    update_beta = freeze_beta is None and d > 0
    blocks = _beta_blocks(d, config.beta_block_size)
    beta_stats = [BlockStats() for _ in blocks]
    beta_rw = [AdaptiveRwState(dim=len(b)) for b in blocks]
    theta_stats = [BlockStats() for _ in range(n)]
    theta_rw = [AdaptiveRwState(dim=2) for _ in range(n)]
    series_rngs = rng.spawn(n)
    k_idx = np.zeros((T, n), dtype=np.int64)

    def update_series(j, z_j):
        srng = series_rngs[j]
        kj = sample_indicators(z_j, h[:, j], table, srng)
        if j in fixed_sv:
            sv = fixed_sv[j]
            form = StateSpaceForm.centered(sv)
            hj, mj = ffbs_sample(form, z_j, kj, table, srng)
        else:
            theta[j] = sv_theta_step(
                theta[j], z_j, kj, table, prior, config, theta_rw[j], srng, theta_stats[j]
            )
            form = StateSpaceForm.mu_augmented(
                phi=float(theta[j, 0]), sigma=float(theta[j, 1]),
                m_mu=prior.m_mu, v_mu=prior.v_mu,
            )
            hj, mj = ffbs_sample(form, z_j, kj, table, srng)
        return j, kj, hj, mj

    total = config.burn_in + config.n_iter
    draws = np.empty((config.n_iter, len(beta) + 3 * n))
    seconds = np.empty(total)
    pool = ThreadPoolExecutor(max_workers=config.threads) if config.threads > 1 else None

    try:
        for it in range(total):
            t0 = time.perf_counter()
            try:
                if update_beta:
                    beta = sample_beta(
                        y, h, beta, p, k, prior, config, beta_rw, rng, beta_stats
                    )
                    B = unpack_loadings(beta, p, k)
                f = sample_factors(y, B, h, rng)
                resid = y - f @ B.T
                zs = [
                    transform_observations(resid[:, j], config.offset) if j < p
                    else transform_observations(f[:, j - p], config.offset)
                    for j in range(n)
                ]
                if pool is not None:
                    results = list(pool.map(update_series, range(n), zs))
                else:
                    results = [update_series(j, zs[j]) for j in range(n)]
                for j, kj, hj, mj in results:
                    k_idx[:, j] = kj
                    h[:, j] = hj
                    mu[j] = mj
            except NumericalError as exc:
                raise NumericalError(f"iteration {it}: {exc}") from exc
            seconds[it] = time.perf_counter() - t0
            if it >= config.burn_in:
                draws[it - config.burn_in] = np.concatenate(
                    [beta, np.column_stack([mu, theta[:, 0], theta[:, 1]]).ravel()]
                )
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    labels = [f"b{i + 1}_{j + 1}" for i, j in free_loading_indices(p, k)]
    for j in range(n):
        name = _series_label(j, p)
        labels += [f"mu_{name}", f"phi_{name}", f"sigma_{name}"]
    stats = {f"beta_block{b}": s for b, s in enumerate(beta_stats) if update_beta}
    for j in range(n):
        if j not in fixed_sv:
            stats[f"theta_{_series_label(j, p)}"] = theta_stats[j]
    chain = Chain(
        iterates=draws,
        labels=labels,
        block_stats=stats,
        burn_in=config.burn_in,
        iter_seconds=seconds,
        method=config.method,
    )
    return chain, FactorPaths(f=f.copy(), h=h.copy(), k_idx=k_idx.copy())
