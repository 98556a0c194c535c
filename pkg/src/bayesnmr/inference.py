"""Conjugate Gaussian inference over the species amplitudes.

Given the nuisance parameters the model is linear in the amplitudes, so
the amplitude posterior and the evidence (amplitudes integrated out) are
closed form.  Everything goes through Cholesky factorizations of the r x r
posterior precision; no explicit inverse is formed except when the
posterior covariance itself is returned.

The evidence is the exact Gaussian marginal

    log N(y; X mu0, v I + gamma X X^T),   X = [Phi; Psi],

evaluated in its r-dimensional form

    -1/2 [ ||y - X mu||^2 / v + ||mu - mu0||^2 / gamma ]
    -1/2 log|A| - (N+M)/2 log(2 pi v) - r/2 log(gamma),

with A = X^T X / v + I / gamma the posterior precision. Note that the
-1/2 log|A| Occam term is easy to lose when the expression is split into
per-channel fit terms; it is not constant in the frequencies, decay or
noise variance, and dropping it biases the noise estimate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._kernels import evidence_terms, gram_uniform, profile_noise
from .model import FidRecord, NuisanceParams, SpeciesTable, basis_matrices, complex_basis

log = logging.getLogger(__name__)

JITTER_LEVELS = (1e-12, 1e-10, 1e-8)


class FactorizationError(np.linalg.LinAlgError):
    """A matrix expected to be positive definite could not be factorized."""

    def __init__(self, msg, cond=None):
        super().__init__(msg if cond is None else f"{msg} (condition estimate {cond:.3e})")
        self.cond = cond


class NonFiniteEvidenceError(FloatingPointError):
    def __init__(self, term: str, terms: dict):
        super().__init__(f"log evidence is not finite: term {term!r} = {terms[term]!r}")
        self.term = term
        self.terms = terms


def cholesky(A: np.ndarray, jitter: bool = True) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PD matrix.

    With ``jitter`` the diagonal is inflated by 1e-12, 1e-10 then 1e-8 times
    trace/r before giving up. Each escalation is logged.
    """
    A = np.asarray(A, float)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    if jitter:
        r = A.shape[0]
        scale = np.trace(A) / r if r else 0.0
        for level in JITTER_LEVELS:
            log.warning("cholesky failed; retrying with jitter %.0e x trace/r", level)
            try:
                return np.linalg.cholesky(A + level * scale * np.eye(r))
            except np.linalg.LinAlgError:
                continue
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A) if A.size else np.nan
    raise FactorizationError("matrix is not positive definite", cond)


def _is_uniform(t: np.ndarray) -> bool:
    if t.size < 3:
        return t.size == 2
    d = np.diff(t)
    return bool(np.all(np.abs(d - d.mean()) <= 1e-9 * abs(d.mean())))


def _chol_solve(L, b):
    return linalg.cho_solve((L, True), b, check_finite=False)


@dataclass(frozen=True)
class AmplitudePrior:
    """Gaussian prior N(mu0, S0) on the amplitudes.

    ``AmplitudePrior.vague(gamma, r)`` is the isotropic S0 = gamma I case used
    to stand in for an improper flat prior.
    """

    mu0: np.ndarray
    S0: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, float))
        S0 = np.atleast_2d(np.asarray(self.S0, float))
        if S0.shape != (mu0.size, mu0.size):
            raise ValueError("S0 shape does not match mu0")
        if not np.allclose(S0, S0.T):
            raise ValueError("S0 must be symmetric")
        cholesky(S0, jitter=False)
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "S0", S0)

    @classmethod
    def vague(cls, gamma: float, r: int, mu0=None) -> "AmplitudePrior":
        if not gamma > 0:
            raise ValueError("gamma must be > 0")
        mu0 = np.zeros(r) if mu0 is None else mu0
        return cls(mu0, gamma * np.eye(r), float(gamma))

    @property
    def r(self) -> int:
        return self.mu0.size

    def precision_terms(self):
        """(S0^-1, S0^-1 mu0)."""
        if self.gamma is not None:
            return np.eye(self.r) / self.gamma, self.mu0 / self.gamma
        L = cholesky(self.S0, jitter=False)
        return _chol_solve(L, np.eye(self.r)), _chol_solve(L, self.mu0)


@dataclass(frozen=True)
class AmplitudePosterior:
    mu: np.ndarray
    S: np.ndarray

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.S))


def vague_gamma(fid: FidRecord, psi: NuisanceParams, table: SpeciesTable,
                factor: float = 1e9) -> float:
    """Prior variance standing in for the improper flat prior.

    factor * (median |y| / median column norm of Phi)^2.
    """
    Phi, _ = basis_matrices(psi, table, fid.acq, fid.times_real_s, fid.times_imag_s)
    y = np.concatenate([fid.y1, fid.y2])
    col = np.median(np.linalg.norm(Phi, axis=0)) if Phi.size else 0.0
    ymed = np.median(np.abs(y)) if y.size else 0.0
    if not (col > 0 and ymed > 0):
        return factor
    return factor * (ymed / col) ** 2


def _sufficient_stats(fid, psi, table):
    Phi, Psi = basis_matrices(psi, table, fid.acq, fid.times_real_s, fid.times_imag_s)
    G = Phi.T @ Phi + Psi.T @ Psi
    b = Phi.T @ fid.y1 + Psi.T @ fid.y2
    return Phi, Psi, G, b


def _posterior_from_stats(G, b, v, prior):
    P0, h0 = prior.precision_terms()
    L = cholesky(P0 + G / v)
    mu = _chol_solve(L, h0 + b / v)
    S = _chol_solve(L, np.eye(len(mu)))
    return AmplitudePosterior(mu, 0.5 * (S + S.T))


def amplitude_posterior(fid: FidRecord, psi: NuisanceParams, v: float, prior: AmplitudePrior,
                        table: SpeciesTable) -> AmplitudePosterior:
    """Gaussian posterior over the amplitudes given both channels.

    S = (S0^-1 + Phi^T Phi / v + Psi^T Psi / v)^-1,
    mu = S (S0^-1 mu0 + Phi^T y1 / v + Psi^T y2 / v).
    """
    if not v > 0:
        raise ValueError("noise variance must be > 0")
    if prior.r != table.n_species:
        raise ValueError("prior dimension does not match the species count")
    _, _, G, b = _sufficient_stats(fid, psi, table)
    return _posterior_from_stats(G, b, v, prior)


def mu_real(fid: FidRecord, psi: NuisanceParams, v: float, prior: AmplitudePrior,
            table: SpeciesTable) -> np.ndarray:
    """Posterior mean using the real (cosine) channel only.

    Both the prior and the data terms carry their precisions, i.e.
    (Phi^T Phi / v + S0^-1)^-1 (S0^-1 mu0 + Phi^T y1 / v).
    """
    if not v > 0:
        raise ValueError("noise variance must be > 0")
    Phi, _ = basis_matrices(psi, table, fid.acq, fid.times_real_s, fid.times_imag_s[:0])
    P0, h0 = prior.precision_terms()
    L = cholesky(P0 + Phi.T @ Phi / v)
    return _chol_solve(L, h0 + Phi.T @ fid.y1 / v)


def _evidence_terms(G, b, yy, n, v, gamma, mu0):
    r = len(b)
    A = G / v + np.eye(r) / gamma
    rhs = b / v + mu0 / gamma
    L = cholesky(A)
    mu = _chol_solve(L, rhs)
    # min_a ||y - X a||^2 / v + ||a - mu0||^2 / gamma, attained at mu
    with np.errstate(invalid="ignore"):  # non-finite data is reported by _total
        quad = yy / v + mu0 @ mu0 / gamma - rhs @ mu
    return {
        "fit": -0.5 * quad,
        "logdet": -np.sum(np.log(np.diag(L))),
        "noise_norm": -0.5 * n * np.log(2 * np.pi * v),
        "prior_norm": -0.5 * r * np.log(gamma),
    }


def _total(terms):
    total = sum(terms.values())
    if not np.isfinite(total):
        bad = next((k for k, t in terms.items() if not np.isfinite(t)), "fit")
        raise NonFiniteEvidenceError(bad, terms)
    return float(total)


def log_marginal_likelihood(fid: FidRecord, psi: NuisanceParams, v: float, gamma: float,
                            mu0, table: SpeciesTable) -> float:
    """Log evidence log p(y1, y2 | psi, v) under the prior N(mu0, gamma I)."""
    if not v > 0 or not gamma > 0:
        raise ValueError("v and gamma must be > 0")
    mu0 = np.zeros(table.n_species) if mu0 is None else np.asarray(mu0, float)
    _, _, G, b = _sufficient_stats(fid, psi, table)
    yy = fid.y1 @ fid.y1 + fid.y2 @ fid.y2
    n = fid.y1.size + fid.y2.size
    return _total(_evidence_terms(G, b, yy, n, v, gamma, mu0))


class EvidenceObjective:
    """Log evidence with the data-dependent pieces cached.

    Meant for the optimizer: each call costs one basis construction plus an
    r x r factorization, O((N+M) r^2 + r^3). Instances are read-only after
    construction and safe to share between threads.
    """

    def __init__(self, fid: FidRecord, table: SpeciesTable, gamma: float, mu0=None):
        self.fid = fid
        self.table = table
        self.gamma = float(gamma)
        self.mu0 = np.zeros(table.n_species) if mu0 is None else np.asarray(mu0, float)
        self.yy = float(fid.y1 @ fid.y1 + fid.y2 @ fid.y2)
        self.n = fid.y1.size + fid.y2.size
        self._uniform = fid.shared_grid and _is_uniform(fid.times_real_s)
        if self._uniform:
            t = fid.times_real_s
            self._grid = (float(t[0]), float((t[-1] - t[0]) / (t.size - 1)), t.size)
            self._B = np.ascontiguousarray(table.intensities)
            self._species = np.ascontiguousarray(table.line_species)
            self._zr = np.ascontiguousarray(fid.y1)
            self._zi = np.ascontiguousarray(fid.y2)

    def stats(self, psi: NuisanceParams):
        if not self._uniform:
            return _sufficient_stats(self.fid, psi, self.table)[2:]
        psi.check(self.table)
        t0, dt, n = self._grid
        dw = np.ascontiguousarray(psi.freqs_rad_s - self.fid.acq.omega0_rad_s)
        return gram_uniform(t0, dt, n, dw, float(psi.tau_s), float(psi.theta_rad),
                            float(psi.alpha_per_s), self._B, self._species,
                            self.table.n_species, self._zr, self._zi)

    def raw_stats(self, freqs_rad_s, theta, tau, alpha):
        """``stats`` without building a NuisanceParams (uniform grids only)."""
        t0, dt, n = self._grid
        dw = freqs_rad_s - self.fid.acq.omega0_rad_s
        return gram_uniform(t0, dt, n, dw, tau, theta, alpha, self._B, self._species,
                            self.table.n_species, self._zr, self._zi)

    def from_stats(self, G, b, v: float) -> float:
        if not v > 0:
            raise ValueError("noise variance must be > 0")
        ok, fit, logdet, nn, pn, _ = evidence_terms(G.copy(), b, self.yy, self.n, v,
                                                    self.gamma, self.mu0)
        if ok:
            return _total({"fit": fit, "logdet": logdet, "noise_norm": nn, "prior_norm": pn})
        return _total(_evidence_terms(G, b, self.yy, self.n, v, self.gamma, self.mu0))

    def best_noise(self, G, b, v_lo: float = 0.0, v_hi: float = np.inf, iters: int = 20) -> float:
        """Evidence-maximizing noise variance for fixed nuisance parameters."""
        return profile_noise(G, b, self.yy, self.n, self.gamma, self.mu0, v_lo, v_hi, iters)

    def __call__(self, psi: NuisanceParams, v: float) -> float:
        G, b = self.stats(psi)
        return self.from_stats(G, b, v)

    def posterior(self, psi: NuisanceParams, v: float) -> AmplitudePosterior:
        G, b = self.stats(psi)
        return _posterior_from_stats(G, b, v, AmplitudePrior.vague(self.gamma, len(b), self.mu0))


def sample_amplitudes(post: AmplitudePosterior, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from N(mu, S) as an (n, r) array.

    The factorization is strict: a singular S raises instead of being
    regularized.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    L = cholesky(post.S, jitter=False)
    rng = np.random.default_rng(seed)
    return post.mu + rng.standard_normal((n, post.mu.size)) @ L.T
