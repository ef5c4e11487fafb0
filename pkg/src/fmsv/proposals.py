"""Metropolis-Hastings proposal builders and acceptance logic.

Three proposal families:

* mode proposals: Newton search run to convergence, multivariate-t
  centered at the mode with the inverse negative Hessian as scale;
* k-step proposals: k Newton iterations from the current point, Gaussian
  with the local quadratic model's center and curvature;
* adaptive random walk: the two-component mixture
  (1-d)*N(theta0, 2.38^2 Sigma/dim) + d*N(theta0, 0.1^2 I/dim) with
  Sigma estimated from the chain's own iterates.

Plus the two-stage delayed-rejection acceptance that combines a k-step
first stage with an adaptive random-walk second stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .core import ModeSearchError, NumericalError

Objective = Callable[[np.ndarray], float]

#: Relative finite-difference step per coordinate.
FD_REL_STEP = 1e-4
#: Log-space clamp for (1 - alpha) factors in the second stage.
ALPHA_CLAMP = 1e-300


def fd_gradient(f: Objective, x: np.ndarray, rel_step: float = FD_REL_STEP) -> np.ndarray:
    """Central-difference gradient with step rel_step * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hessian(
    f: Objective,
    x: np.ndarray,
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    rel_step: float = FD_REL_STEP,
) -> np.ndarray:
    """Hessian by central differencing of gradients; symmetrized."""
    x = np.asarray(x, dtype=float)
    if grad is None:
        grad = lambda v: fd_gradient(f, v, rel_step)
    d = x.size
    H = np.empty((d, d))
    for j in range(d):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        H[:, j] = (grad(xp) - grad(xm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def pd_repair(C: np.ndarray, min_shift: float = 1e-6) -> np.ndarray:
    """Make a symmetric matrix positive definite.

    If the smallest eigenvalue is <= 0, shift by (|lambda_min| + 1e-6) I.
    Raises NumericalError if the repaired matrix still fails a Cholesky.
    """
    C = 0.5 * (C + C.T)
    lam_min = float(np.linalg.eigvalsh(C)[0])
    if not np.isfinite(lam_min):
        raise NumericalError("curvature matrix has non-finite entries")
    if lam_min <= 0.0:
        C = C + (abs(lam_min) + min_shift) * np.eye(C.shape[0])
    try:
        np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise NumericalError("positive-definite repair failed") from exc
    return C


@dataclass
class GaussianProposal:
    """Proposal distribution: multivariate normal or multivariate-t.

    Covariance must be symmetric positive definite; a Cholesky factor is
    cached at construction.
    """

    mean: np.ndarray
    cov: np.ndarray
    family: str = "normal"
    df: float = math.inf
    _chol: np.ndarray = field(init=False, repr=False)
    _logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.family not in ("normal", "t"):
            raise ValueError(f"unknown proposal family {self.family!r}")
        if self.family == "t" and not self.df > 0:
            raise ValueError("t proposal needs df > 0")
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("proposal covariance is not positive definite") from exc
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        u = self._chol @ rng.standard_normal(self.dim)
        if self.family == "t":
            g = rng.chisquare(self.df)
            u = u * math.sqrt(self.df / g)
        return self.mean + u

    def logpdf(self, x: np.ndarray) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = x - self.mean
        sol = np.linalg.solve(self._chol, r)
        m = float(sol @ sol)
        d = self.dim
        if self.family == "normal":
            return -0.5 * (d * math.log(2.0 * math.pi) + self._logdet + m)
        v = self.df
        return float(
            gammaln(0.5 * (v + d))
            - gammaln(0.5 * v)
            - 0.5 * d * math.log(v * math.pi)
            - 0.5 * self._logdet
            - 0.5 * (v + d) * math.log1p(m / v)
        )


def _quadratic_model(
    objective: Objective,
    x: np.ndarray,
    grad: Optional[Callable],
    hess: Optional[Callable],
) -> tuple[np.ndarray, np.ndarray]:
    """Return (b, C) of the local quadratic model b'theta - theta'C theta/2."""
    g = grad(x) if grad is not None else fd_gradient(objective, x)
    H = hess(x) if hess is not None else fd_hessian(objective, x, grad)
    C = pd_repair(-H)
    b = g + C @ x
    return b, C


def kstep_proposal(
    objective: Objective,
    theta0: np.ndarray,
    k: int = 1,
    grad: Optional[Callable] = None,
    hess: Optional[Callable] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> GaussianProposal:
    """Proposal from k Newton iterations toward the objective's mode.

    Starting at theta0, iterate theta <- C(theta)^{-1} b(theta) with
    b = g - H theta and C = -H; after the k-th iterate return
    N(C^{-1} b, C^{-1}) evaluated at that iterate.  The construction is
    deterministic in theta0, so the reverse proposal is rebuilt the same
    way from the proposed point.  ``project`` clips iterates into the
    region where the objective is evaluable.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    th = np.atleast_1d(np.asarray(theta0, dtype=float))
    if project is not None:
        th = project(th)
    for _ in range(k):
        b, C = _quadratic_model(objective, th, grad, hess)
        th = np.linalg.solve(C, b)
        if project is not None:
            th = project(th)
    b, C = _quadratic_model(objective, th, grad, hess)
    cov = np.linalg.inv(C)
    return GaussianProposal(mean=np.linalg.solve(C, b), cov=0.5 * (cov + cov.T))


def mode_proposal(
    objective: Objective,
    theta0: np.ndarray,
    df: float = 10.0,
    grad: Optional[Callable] = None,
    hess: Optional[Callable] = None,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> GaussianProposal:
    """Proposal from the mode of the objective (optimization method).

    Safeguarded Newton (positive-definite repair plus step halving) until
    the gradient infinity-norm is below tol; returns multivariate-t
    centered at the mode with the inverse negative Hessian scale.
    Raises ModeSearchError carrying the best point if max_iter is hit.
    """
    th = np.atleast_1d(np.asarray(theta0, dtype=float))
    if project is not None:
        th = project(th)
    f_cur = objective(th)
    for _ in range(max_iter):
        g = grad(th) if grad is not None else fd_gradient(objective, th)
        if float(np.max(np.abs(g))) < tol:
            H = hess(th) if hess is not None else fd_hessian(objective, th, grad)
            cov = np.linalg.inv(pd_repair(-H))
            return GaussianProposal(
                mean=th, cov=0.5 * (cov + cov.T), family="t", df=df
            )
        H = hess(th) if hess is not None else fd_hessian(objective, th, grad)
        step = np.linalg.solve(pd_repair(-H), g)
        lam = 1.0
        for _ in range(40):
            cand = th + lam * step
            if project is not None:
                cand = project(cand)
            f_new = objective(cand)
            if f_new >= f_cur - 1e-12:
                th, f_cur = cand, f_new
                break
            lam *= 0.5
        else:
            # no ascent possible along the Newton direction; treat the
            # current point as the mode if the gradient is already small
            break
    g = grad(th) if grad is not None else fd_gradient(objective, th)
    if float(np.max(np.abs(g))) < tol:
        H = hess(th) if hess is not None else fd_hessian(objective, th, grad)
        cov = np.linalg.inv(pd_repair(-H))
        return GaussianProposal(mean=th, cov=0.5 * (cov + cov.T), family="t", df=df)
    raise ModeSearchError(
        f"mode search did not reach gradient tolerance {tol}", best=th, value=f_cur
    )


@dataclass
class AdaptiveRwState:
    """Streaming mean/covariance of the chain iterates for the adaptive
    random walk.  Confined to a single chain; mutate from one thread only.

    For the first ``2 dim + 10`` recorded iterates only the small fixed
    component N(theta0, 0.1^2 I / dim) is used; afterwards the mixture
    (1 - delta) N(theta0, 2.38^2 Sigma / dim) + delta N(theta0, 0.1^2 I / dim)
    with Sigma the running covariance.
    """

    dim: int
    delta: float = 0.05
    count: int = 0
    _mean: np.ndarray = field(init=False)
    _m2: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        self._mean = np.zeros(self.dim)
        self._m2 = np.zeros((self.dim, self.dim))

    @property
    def warmup(self) -> int:
        return 2 * self.dim + 10

    @property
    def adapted(self) -> bool:
        return self.count >= self.warmup

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        dx = x - self._mean
        self._mean += dx / self.count
        self._m2 += np.outer(dx, x - self._mean)

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            return np.eye(self.dim)
        return self._m2 / (self.count - 1)

    def _components(self) -> tuple[np.ndarray, np.ndarray]:
        small = (0.1**2 / self.dim) * np.eye(self.dim)
        big = (2.38**2 / self.dim) * self.covariance()
        # ridge keeps the empirical component samplable early on
        big += 1e-12 * np.eye(self.dim)
        return big, small

    def propose(self, theta0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        theta0 = np.asarray(theta0, dtype=float)
        big, small = self._components()
        if not self.adapted or rng.random() < self.delta:
            cov = small
        else:
            cov = big
        try:
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            L = np.linalg.cholesky(small)
        return theta0 + L @ rng.standard_normal(self.dim)

    def logpdf(self, theta0: np.ndarray, x: np.ndarray) -> float:
        """Mixture density of a draw centered at theta0.

        Symmetric by construction: logpdf(a, b) == logpdf(b, a).  Only
        needed diagnostically; it cancels in the second-stage ratio.
        """
        big, small = self._components()
        if not self.adapted:
            return GaussianProposal(theta0, small).logpdf(x)
        l1 = GaussianProposal(theta0, big).logpdf(x)
        l2 = GaussianProposal(theta0, small).logpdf(x)
        hi = max(l1, l2)
        return hi + math.log(
            (1.0 - self.delta) * math.exp(l1 - hi) + self.delta * math.exp(l2 - hi)
        )


def mh_accept(
    log_prior0: float,
    log_lik0: float,
    log_prior1: float,
    log_lik1: float,
    log_q_fwd: float,
    log_q_rev: float,
    rng: np.random.Generator,
) -> tuple[bool, float]:
    """First-stage acceptance for a (possibly independence) MH proposal.

    alpha = min(1, pi(t1) p(z|t1) q(t0|t1) / [pi(t0) p(z|t0) q(t1|t0)]),
    computed in log space; a zero-prior candidate is never accepted.
    """
    alpha = stage1_alpha(log_prior0, log_lik0, log_prior1, log_lik1, log_q_fwd, log_q_rev)
    return bool(rng.random() < alpha), alpha


def stage1_alpha(
    log_prior0: float,
    log_lik0: float,
    log_prior1: float,
    log_lik1: float,
    log_q_fwd: float,
    log_q_rev: float,
) -> float:
    num = log_prior1 + log_lik1 + log_q_rev
    if num == -math.inf:
        return 0.0
    den = log_prior0 + log_lik0 + log_q_fwd
    lr = num - den
    return 1.0 if lr >= 0.0 else math.exp(lr)


def dr_stage2_alpha(
    log_prior0: float,
    log_lik0: float,
    log_q1_theta1_from0: float,
    alpha1_fwd: float,
    log_prior2: float,
    log_lik2: float,
    log_q1_theta1_from2: float,
    alpha1_rev: float,
) -> float:
    """Second-stage acceptance after a rejected first-stage candidate.

    alpha2 = min{1, [pi(t2) p(t2) q1(t1|t2) (1 - alpha1(t2->t1))]
                  / [pi(t0) p(t0) q1(t1|t0) (1 - alpha1(t0->t1))]}.
    The random-walk density cancels because it is symmetric.  If the
    denominator factor 1 - alpha1(t0->t1) underflows to zero the ratio is
    treated as an accept; if the numerator factor is zero, alpha2 = 0.
    """
    if log_prior2 + log_lik2 == -math.inf:
        return 0.0
    rej_rev = 1.0 - alpha1_rev
    if rej_rev <= 0.0:
        return 0.0
    rej_fwd = 1.0 - alpha1_fwd
    if rej_fwd <= ALPHA_CLAMP:
        return 1.0
    num = log_prior2 + log_lik2 + log_q1_theta1_from2 + math.log(max(rej_rev, ALPHA_CLAMP))
    den = log_prior0 + log_lik0 + log_q1_theta1_from0 + math.log(rej_fwd)
    lr = num - den
    return 1.0 if lr >= 0.0 else math.exp(lr)


def dr_accept_stage2(
    log_prior0,
    log_lik0,
    log_q1_theta1_from0,
    alpha1_fwd,
    log_prior2,
    log_lik2,
    log_q1_theta1_from2,
    alpha1_rev,
    rng: np.random.Generator,
) -> tuple[bool, float]:
    alpha2 = dr_stage2_alpha(
        log_prior0,
        log_lik0,
        log_q1_theta1_from0,
        alpha1_fwd,
        log_prior2,
        log_lik2,
        log_q1_theta1_from2,
        alpha1_rev,
    )
    return bool(rng.random() < alpha2), alpha2
