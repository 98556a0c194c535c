"""Data-driven starting point for the nuisance search.

The evidence is needle-shaped in every frequency, so a blind search from the
tabulated frequencies rarely lands in the right basin. Here each line is
located separately with a matched-filter periodogram (one free complex
amplitude per line), lines are peeled off greedily, and the phase
parameters are read off the fitted complex amplitudes:

    c_k ~ A_j B_k exp(i (theta + dw_k tau))

so (theta, tau) is found by a grid over tau with theta maximized in closed
form. The result only seeds the annealed simplex; it never replaces it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize

from .model import FidRecord, SpeciesTable

log = logging.getLogger(__name__)

MAX_ASSIGNMENTS = 2000


@dataclass(frozen=True)
class LinePick:
    dw: float  # offset from omega0, rad/s
    alpha: float
    c: complex
    gain: float


def _line_fit(z, t, dw, alpha):
    e = np.exp((1j * dw - alpha) * t)
    nrm = float(np.real(np.vdot(e, e)))
    p = np.vdot(e, z)
    return abs(p) ** 2 / nrm, p / nrm, e


def _refine(res, t, dw, alpha, alpha_bounds, dw_step):
    lo, hi = alpha_bounds

    def neg_gain(p):
        if not lo <= p[1] <= hi:
            return 0.0
        return -_line_fit(res, t, p[0], p[1])[0]

    simplex = [[dw, alpha], [dw + dw_step, alpha], [dw, min(hi, 1.5 * alpha)]]
    r = minimize(neg_gain, [dw, alpha], method="Nelder-Mead",
                 options=dict(xatol=1e-3, fatol=1e-9, initial_simplex=simplex))
    return float(r.x[0]), float(np.clip(r.x[1], lo, hi))


def pick_lines(fid: FidRecord, n_lines: int, boxes_rad_s, alpha0: float = 10.0,
               alpha_bounds=(1.0, 200.0), nfft: int = 1 << 16, sweeps: int = 2) -> list[LinePick]:
    """Greedy matched-filter line search restricted to the union of ``boxes_rad_s``.

    Each step takes the strongest periodogram peak of the residual, refines
    its frequency and decay, and subtracts it. ``sweeps`` backfitting passes
    then re-refine every line against the others.
    """
    t = fid.times_real_s
    dt = float(t[1] - t[0])
    z = fid.complex
    w0 = fid.acq.omega0_rad_s
    nfft = max(nfft, 1 << int(np.ceil(np.log2(t.size))))
    dw_axis = 2 * np.pi * np.fft.fftfreq(nfft, dt)
    allowed = np.zeros(nfft, bool)
    for lo, hi in boxes_rad_s:
        allowed |= (dw_axis + w0 >= lo) & (dw_axis + w0 <= hi)
    dw_step = 2 * np.pi / (nfft * dt)

    picks: list[LinePick] = []
    res = z.copy()
    damp = np.exp(-alpha0 * (t - t[0]))
    for _ in range(n_lines):
        power = np.abs(np.fft.fft(res * damp, nfft)) ** 2
        power[~allowed] = -1.0
        i = int(np.argmax(power))
        dw, al = _refine(res, t, dw_axis[i], alpha0, alpha_bounds, dw_step)
        g, c, e = _line_fit(res, t, dw, al)
        picks.append(LinePick(dw, al, c, g))
        res = res - c * e
    for _ in range(sweeps):
        for k, p in enumerate(picks):
            res = res + p.c * np.exp((1j * p.dw - p.alpha) * t)
            dw, al = _refine(res, t, p.dw, p.alpha, alpha_bounds, dw_step)
            g, c, e = _line_fit(res, t, dw, al)
            picks[k] = LinePick(dw, al, c, g)
            res = res - c * e
    return picks


def phase_score(dw, c, table: SpeciesTable, taus):
    """Best (score, theta, tau) of the species-coherent fit over a tau grid.

    For each tau the species sums s_j = sum_k B_k c_k exp(-i dw_k tau) are
    formed; sum_j Re(exp(-i theta) s_j)^2 / sum_k B_k^2 is maximized over
    theta analytically.
    """
    B = table.intensities
    sp = table.line_species
    d = (B * c)[:, None] * np.exp(-1j * np.outer(dw, taus))
    s = np.zeros((table.n_species, taus.size), complex)
    np.add.at(s, sp, d)
    nj = np.bincount(sp, weights=B ** 2)[:, None]
    total = 0.5 * ((np.abs(s) ** 2 / nj).sum(0) + np.abs((s ** 2 / nj).sum(0)))
    k = int(np.argmax(total))
    theta = 0.5 * float(np.angle((s[:, k] ** 2 / nj[:, 0]).sum()))
    return float(total[k]), theta, float(taus[k])


def _assignments(picks_w, lo, hi, shared: bool = False):
    """Ways to give every line a pick inside its box (capped).

    ``shared=True`` lets several lines take the same pick, which is how two
    nearly coincident lines show up in the periodogram.
    """
    L = len(lo)
    cand = [[p for p, w in enumerate(picks_w) if lo[l] <= w <= hi[l]] for l in range(L)]
    out = []

    def rec(l, used, cur):
        if len(out) >= MAX_ASSIGNMENTS:
            return
        if l == L:
            out.append(tuple(cur))
            return
        for p in cand[l]:
            if shared or p not in used:
                used.add(p)
                cur.append(p)
                rec(l + 1, used, cur)
                cur.pop()
                if p not in cur:
                    used.discard(p)

    rec(0, set(), [])
    return out


def spectral_start(fid: FidRecord, table: SpeciesTable, freq_lo, freq_hi, tau_max: float,
                   alpha_bounds=(1.0, 200.0), alpha0: float = 10.0, objective=None,
                   extra_picks: int = 1) -> np.ndarray:
    """Starting point ``(freqs..., theta, tau, alpha)`` estimated from the data.

    ``freq_lo``/``freq_hi`` are per-line search boxes in rad/s. Returns
    frequencies in rad/s in table line order. Candidate line assignments
    are ranked by ``objective(x)`` when given (the log evidence), otherwise
    by the species-coherent phase score.
    """
    lo = np.asarray(freq_lo, float)
    hi = np.asarray(freq_hi, float)
    L = table.n_lines
    w0 = fid.acq.omega0_rad_s
    picks = pick_lines(fid, L + extra_picks, list(zip(lo, hi)), alpha0, alpha_bounds)
    pw = np.array([p.dw + w0 for p in picks])

    max_dw = max(np.max(np.abs(lo - w0)), np.max(np.abs(hi - w0)), 1.0)
    dtau = 0.1 / max_dw
    taus = np.arange(0.0, tau_max + 0.5 * dtau, dtau)

    options = _assignments(pw, lo, hi)
    if objective is not None:
        seen = set(options)
        options += [a for a in _assignments(pw, lo, hi, shared=True) if a not in seen]
    if not options:
        # some box holds no pick: nearest-centre matching, clipped into the boxes
        centre = 0.5 * (lo + hi)
        _, cols = linear_sum_assignment(np.abs(centre[:, None] - pw[None, :]))
        options = [tuple(cols)]
        log.info("no box-consistent line assignment; using nearest-centre matching")

    best = None
    for perm in options:
        idx = list(perm)
        score, theta, tau = phase_score(pw[idx] - w0, np.array([picks[i].c for i in idx]),
                                        table, taus)
        gains = np.array([picks[i].gain for i in idx])
        alphas = np.array([picks[i].alpha for i in idx])
        alpha = float(np.sum(gains * alphas) / np.sum(gains)) if gains.sum() > 0 else alpha0
        x = np.concatenate([np.clip(pw[idx], lo, hi), [theta, tau, np.clip(alpha, *alpha_bounds)]])
        if objective is not None:
            score = objective(x)
            if not np.isfinite(score):
                continue
        if best is None or score > best[0]:
            best = (score, x)
    if best is None:
        raise ValueError("no candidate start has a finite objective")
    return best[1]
