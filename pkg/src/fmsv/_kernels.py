"""Compiled inner loops.

Scalar-unrolled Kalman filtering / backward sampling for the 2-state
mean-augmented volatility form, the Woodbury factor-model likelihood and
the GARCH(1,1) recursion.  All kernels are deterministic pure functions;
randomness is injected by the callers as pre-drawn normal arrays so that
reproducibility stays entirely in numpy Generator land.

Kernels signal numerical failure by returning NaN; callers translate
that into NumericalError with context attached.
"""

import numpy as np
from numba import njit

LOG2PI = float(np.log(2.0 * np.pi))


@njit(cache=True, nogil=True)
def sv_filter_loglik(z, mk, vk, phi, sigma, m_mu, v_mu):
    """Log-likelihood of z under the mean-augmented 2-state form.

    State x_t = (h_t - mu_t, mu_t); transition diag(phi, 1) with noise
    (sigma, 0); observation z_t = x1 + x2 + mk[t] + N(0, vk[t]); initial
    state N((0, m_mu), [[sigma^2/(1-phi^2)+v_mu, -v_mu], [-v_mu, v_mu]]).
    Returns NaN if |phi| >= 1 or a predictive variance is non-positive.
    """
    T = z.shape[0]
    sig2 = sigma * sigma
    om = 1.0 - phi * phi
    if om <= 0.0:
        return np.nan
    f1 = 0.0
    f2 = m_mu
    p11 = sig2 / om + v_mu
    p12 = -v_mu
    p22 = v_mu
    ll = 0.0
    for t in range(T):
        c1 = p11 + p12
        c2 = p12 + p22
        F = c1 + c2 + vk[t]
        if F <= 0.0:
            return np.nan
        e = z[t] - (f1 + f2 + mk[t])
        ll += -0.5 * (LOG2PI + np.log(F) + e * e / F)
        k1 = c1 / F
        k2 = c2 / F
        a1 = f1 + k1 * e
        a2 = f2 + k2 * e
        q11 = p11 - c1 * c1 / F
        q12 = p12 - c1 * c2 / F
        q22 = p22 - c2 * c2 / F
        f1 = phi * a1
        f2 = a2
        p11 = phi * phi * q11 + sig2
        p12 = phi * q12
        p22 = q22
    return ll


@njit(cache=True, nogil=True)
def sv_filter_store(z, mk, vk, phi, sigma, m_mu, v_mu, fm, fc):
    """Same filter but storing filtered means/covariances for the
    backward pass.  fm is T x 2, fc is T x 3 as (p11, p12, p22)."""
    T = z.shape[0]
    sig2 = sigma * sigma
    om = 1.0 - phi * phi
    if om <= 0.0:
        return np.nan
    f1 = 0.0
    f2 = m_mu
    p11 = sig2 / om + v_mu
    p12 = -v_mu
    p22 = v_mu
    ll = 0.0
    for t in range(T):
        c1 = p11 + p12
        c2 = p12 + p22
        F = c1 + c2 + vk[t]
        if F <= 0.0:
            return np.nan
        e = z[t] - (f1 + f2 + mk[t])
        ll += -0.5 * (LOG2PI + np.log(F) + e * e / F)
        k1 = c1 / F
        k2 = c2 / F
        a1 = f1 + k1 * e
        a2 = f2 + k2 * e
        q11 = p11 - c1 * c1 / F
        q12 = p12 - c1 * c2 / F
        q22 = p22 - c2 * c2 / F
        fm[t, 0] = a1
        fm[t, 1] = a2
        fc[t, 0] = q11
        fc[t, 1] = q12
        fc[t, 2] = q22
        f1 = phi * a1
        f2 = a2
        p11 = phi * phi * q11 + sig2
        p12 = phi * q12
        p22 = q22
    return ll


@njit(cache=True, nogil=True, inline="always")
def _chol2(a, b, c):
    """Lower Cholesky factor of a 2x2 PSD matrix with zero-variance guards."""
    if a < 0.0:
        a = 0.0
    if c < 0.0:
        c = 0.0
    l11 = np.sqrt(a)
    if l11 > 1e-154:
        l21 = b / l11
    else:
        l21 = 0.0
    d = c - l21 * l21
    if d < 0.0:
        d = 0.0
    return l11, l21, np.sqrt(d)


@njit(cache=True, nogil=True, inline="always")
def _sympinv2(a, b, c):
    """Pseudo-inverse of a symmetric PSD 2x2 matrix.

    Rank-deficient directions are annihilated rather than exploded so
    that degenerate transitions (sigma = 0, v_mu = 0, phi = 0) condition
    only on the informative subspace.
    """
    det = a * c - b * b
    s = a if a > c else c
    if s < 1e-300:
        return 0.0, 0.0, 0.0
    if det > 1e-13 * s * s:
        return c / det, -b / det, a / det
    # rank one: M = lam * u u' with u the dominant column direction
    lam = a + c
    if a >= c:
        u1, u2 = a, b
    else:
        u1, u2 = b, c
    n2 = u1 * u1 + u2 * u2
    if n2 < 1e-300 or lam < 1e-300:
        return 0.0, 0.0, 0.0
    u1 /= np.sqrt(n2)
    u2 /= np.sqrt(n2)
    return u1 * u1 / lam, u1 * u2 / lam, u2 * u2 / lam


@njit(cache=True, nogil=True)
def sv_ffbs(fm, fc, phi, sigma, eps):
    """Backward sampling pass on stored filtered moments.

    eps is a T x 2 array of standard normals; returns the sampled state
    path (T x 2).  With all covariances zero the draw is the filter mean.
    """
    T = fm.shape[0]
    sig2 = sigma * sigma
    x = np.empty((T, 2))
    p11 = fc[T - 1, 0]
    p12 = fc[T - 1, 1]
    p22 = fc[T - 1, 2]
    l11, l21, l22 = _chol2(p11, p12, p22)
    x[T - 1, 0] = fm[T - 1, 0] + l11 * eps[T - 1, 0]
    x[T - 1, 1] = fm[T - 1, 1] + l21 * eps[T - 1, 0] + l22 * eps[T - 1, 1]
    for t in range(T - 2, -1, -1):
        a1 = fm[t, 0]
        a2 = fm[t, 1]
        p11 = fc[t, 0]
        p12 = fc[t, 1]
        p22 = fc[t, 2]
        # predicted covariance at t+1 given data to t
        pp11 = phi * phi * p11 + sig2
        pp12 = phi * p12
        pp22 = p22
        i11, i12, i22 = _sympinv2(pp11, pp12, pp22)
        # G = Cov(x_t, x_{t+1}) = P_t F'
        g11 = p11 * phi
        g12 = p12
        g21 = p12 * phi
        g22 = p22
        j11 = g11 * i11 + g12 * i12
        j12 = g11 * i12 + g12 * i22
        j21 = g21 * i11 + g22 * i12
        j22 = g21 * i12 + g22 * i22
        d1 = x[t + 1, 0] - phi * a1
        d2 = x[t + 1, 1] - a2
        m1 = a1 + j11 * d1 + j12 * d2
        m2 = a2 + j21 * d1 + j22 * d2
        c11 = p11 - (j11 * g11 + j12 * g12)
        c12 = p12 - (j11 * g21 + j12 * g22)
        c21 = p12 - (j21 * g11 + j22 * g12)
        c22 = p22 - (j21 * g21 + j22 * g22)
        c12 = 0.5 * (c12 + c21)
        l11, l21, l22 = _chol2(c11, c12, c22)
        x[t, 0] = m1 + l11 * eps[t, 0]
        x[t, 1] = m2 + l21 * eps[t, 0] + l22 * eps[t, 1]
    return x


@njit(cache=True, nogil=True)
def factor_loglik(B, sinv, ysinv, qs, sumh, vinv):
    """log p(y | B, h) with the factors integrated out analytically.

    Per time point y_t ~ N(0, B V_t B' + S_t); evaluated via the
    Woodbury identity so the cost is O(p k^2) per observation.
    Inputs precomputed from h: sinv = exp(-h_idio) (T x p),
    ysinv = y * sinv, qs[t] = sum_i y^2 sinv (the B-free quadratic),
    sumh[t] = sum of all log variances, vinv = exp(-h_factor) (T x k).
    """
    T, p = sinv.shape
    k = vinv.shape[1]
    A = np.empty((k, k))
    L = np.empty((k, k))
    r = np.empty(k)
    w = np.empty(k)
    ll = 0.0
    for t in range(T):
        for j in range(k):
            r[j] = 0.0
            for l in range(j):
                A[j, l] = 0.0
            A[j, j] = vinv[t, j]
        for i in range(p):
            si = sinv[t, i]
            yi = ysinv[t, i]
            for j in range(k):
                bij = B[i, j]
                r[j] += yi * bij
                for l in range(j + 1):
                    A[j, l] += si * bij * B[i, l]
        logdet = 0.0
        for j in range(k):
            s = A[j, j]
            for l in range(j):
                s -= L[j, l] * L[j, l]
            if s <= 0.0:
                return np.nan
            L[j, j] = np.sqrt(s)
            logdet += np.log(s)
            for i2 in range(j + 1, k):
                s2 = A[i2, j]
                for l in range(j):
                    s2 -= L[i2, l] * L[j, l]
                L[i2, j] = s2 / L[j, j]
        quad = 0.0
        for j in range(k):
            s = r[j]
            for l in range(j):
                s -= L[j, l] * w[l]
            w[j] = s / L[j, j]
            quad += w[j] * w[j]
        ll += -0.5 * (p * LOG2PI + sumh[t] + logdet + qs[t] - quad)
    return ll


@njit(cache=True, nogil=True)
def garch_loglik_kernel(y2, omega, alpha, beta, s1):
    """Gaussian GARCH(1,1) log-likelihood; recursion seeded with s1."""
    T = y2.shape[0]
    sig2 = s1
    ll = 0.0
    for t in range(T):
        if t > 0:
            sig2 = omega + alpha * y2[t - 1] + beta * sig2
        if sig2 <= 0.0:
            return np.nan
        ll += -0.5 * (LOG2PI + np.log(sig2) + y2[t] / sig2)
    return ll
