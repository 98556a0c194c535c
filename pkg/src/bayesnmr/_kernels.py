"""Compiled inner loop for the evidence on a uniform sampling grid."""
import numpy as np
from numba import njit

# phasors are recomputed exactly every REANCHOR samples to bound recurrence drift
REANCHOR = 256


@njit(cache=True, nogil=True)
def gram_uniform(t0, dt, n, dw, tau, theta, alpha, B, species, r, zr, zi):
    """Return (G, b) = (Re C^H C, Re C^H z) for the complex species basis C.

    Line phasors exp(i (dw (t + tau) + theta) - alpha t) advance by a fixed
    rotation per sample instead of calling exp/cos/sin per entry.
    """
    L = dw.shape[0]
    pr = np.empty(L)
    pi = np.empty(L)
    rr = np.empty(L)
    ri = np.empty(L)
    decay = np.exp(-alpha * dt)
    for l in range(L):
        rr[l] = decay * np.cos(dw[l] * dt)
        ri[l] = decay * np.sin(dw[l] * dt)
    G = np.zeros((r, r))
    b = np.zeros(r)
    cr = np.empty(r)
    ci = np.empty(r)
    for k in range(n):
        if k % REANCHOR == 0:
            t = t0 + k * dt
            amp = np.exp(-alpha * t)
            for l in range(L):
                ph = dw[l] * (t + tau) + theta
                pr[l] = amp * np.cos(ph)
                pi[l] = amp * np.sin(ph)
        for j in range(r):
            cr[j] = 0.0
            ci[j] = 0.0
        for l in range(L):
            j = species[l]
            cr[j] += B[l] * pr[l]
            ci[j] += B[l] * pi[l]
            a = pr[l] * rr[l] - pi[l] * ri[l]
            pi[l] = pr[l] * ri[l] + pi[l] * rr[l]
            pr[l] = a
        for j in range(r):
            b[j] += cr[j] * zr[k] + ci[j] * zi[k]
            for m in range(j + 1):
                G[j, m] += cr[j] * cr[m] + ci[j] * ci[m]
    for j in range(r):
        for m in range(j):
            G[m, j] = G[j, m]
    return G, b


@njit(cache=True, nogil=True)
def _chol_small(A):
    r = A.shape[0]
    L = np.zeros((r, r))
    for j in range(r):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, r):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return L, True


@njit(cache=True, nogil=True)
def _chol_solve_small(L, b):
    r = b.shape[0]
    x = np.empty(r)
    for i in range(r):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(r - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, r):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True, nogil=True)
def evidence_terms(G, b, yy, n, v, gamma, mu0):
    """(ok, fit, logdet, noise_norm, prior_norm, rss) of the Gaussian evidence.

    ``ok`` is False when the posterior precision is not numerically PD; the
    caller then falls back to the jittered factorization.
    """
    r = b.shape[0]
    A = G / v
    rhs = b / v + mu0 / gamma
    for j in range(r):
        A[j, j] += 1.0 / gamma
    L, ok = _chol_small(A)
    if not ok:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0
    mu = _chol_solve_small(L, rhs)
    quad = yy / v + (mu0 @ mu0) / gamma - rhs @ mu
    logdet = 0.0
    for j in range(r):
        logdet -= np.log(L[j, j])
    # residual sum of squares at the posterior mean
    rss = yy - 2.0 * (b @ mu) + mu @ (G @ mu)
    return (True, -0.5 * quad, logdet, -0.5 * n * np.log(2.0 * np.pi * v),
            -0.5 * r * np.log(gamma), rss)


@njit(cache=True, nogil=True)
def profile_noise(G, b, yy, n, gamma, mu0, v_lo, v_hi, iters):
    """Noise variance maximizing the evidence for fixed basis statistics.

    Fixed point v = ||y - X mu(v)||^2 / (n - g(v)) with g the effective
    number of well-determined amplitudes, clipped to [v_lo, v_hi].
    """
    r = b.shape[0]
    lam = np.linalg.eigvalsh(G)
    v = yy / n
    for _ in range(iters):
        ok, fit, logdet, nn, pn, rss = evidence_terms(G.copy(), b, yy, n, v, gamma, mu0)
        if not ok:
            break
        g = 0.0
        for i in range(r):
            g += lam[i] / (lam[i] + v / gamma)
        denom = n - g
        if rss <= 0.0 or denom <= 0.0:
            break
        v_new = rss / denom
        if abs(v_new - v) <= 1e-13 * v:
            v = v_new
            break
        v = v_new
    return min(max(v, v_lo), v_hi)
