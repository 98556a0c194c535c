"""Conventional Fourier-transform quantification.

apodize -> zero-fill -> DFT -> phase -> baseline -> window integrals ->
B-normalized concentrations with propagated errors.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .model import FidRecord, SpeciesTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Spectrum:
    """Real (absorptive) spectrum on a descending ppm axis."""

    freq_axis_ppm: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        ax = np.asarray(self.freq_axis_ppm, float)
        it = np.asarray(self.intensity, float)
        if ax.shape != it.shape:
            raise ValueError("axis and intensity lengths differ")
        d = np.diff(ax)
        if ax.size > 1 and not (np.all(d < 0) or np.all(d > 0)):
            raise ValueError("frequency axis must be strictly monotonic")
        object.__setattr__(self, "freq_axis_ppm", ax)
        object.__setattr__(self, "intensity", it)

    def mask(self, lo_ppm: float, hi_ppm: float) -> np.ndarray:
        return (self.freq_axis_ppm >= lo_ppm) & (self.freq_axis_ppm <= hi_ppm)

    def with_intensity(self, intensity) -> "Spectrum":
        return Spectrum(self.freq_axis_ppm, intensity)


@dataclass(frozen=True)
class PeakWindow:
    species: str
    line_index: int
    lo_ppm: float
    hi_ppm: float

    def __post_init__(self):
        if not self.lo_ppm < self.hi_ppm:
            raise ValueError(f"window {self.species}[{self.line_index}]: lo must be < hi")

    def overlaps(self, other: "PeakWindow") -> bool:
        return self.lo_ppm < other.hi_ppm and other.lo_ppm < self.hi_ppm


@dataclass(frozen=True)
class PeakIntegral:
    S: float
    n: int


@dataclass
class FtQuantResult:
    species: list[str]
    C: np.ndarray
    E: np.ndarray
    I: np.ndarray
    E_I: np.ndarray
    per_peak_S: np.ndarray
    snr_per_peak: np.ndarray

    @property
    def snr(self) -> float:
        """SNR quoted for the whole spectrum: that of the weakest peak."""
        return float(np.min(self.snr_per_peak))

    @property
    def interval(self) -> tuple[np.ndarray, np.ndarray]:
        return self.C - 2 * self.E, self.C + 2 * self.E


def default_windows(table: SpeciesTable, half_width_ppm: float = 0.5,
                    centers_ppm=None) -> list[PeakWindow]:
    """One window per line, ``center +- half_width``; centers default to the table values."""
    centers = table.freqs_ppm if centers_ppm is None else np.asarray(centers_ppm, float)
    out = []
    k = 0
    for s in table.species:
        for i, _ in enumerate(s.lines):
            c = float(centers[k])
            out.append(PeakWindow(s.name, i, c - half_width_ppm, c + half_width_ppm))
            k += 1
    return out


def apodization(t: np.ndarray, line_broadening_hz: float) -> np.ndarray:
    return np.exp(-np.pi * line_broadening_hz * (t - t[0]))


def preprocess(fid: FidRecord, line_broadening_hz: float = 1.0, zerofill_to: int = 16384,
               theta: float = 0.0, tau: float = 0.0) -> Spectrum:
    """Apodize, zero-fill, transform and phase a two-channel FID.

    Zero-order correction removes ``theta``; first-order correction removes
    the linear phase ``(w - w0) * (tau + t_first)`` a delayed acquisition puts
    on a line at offset ``w - w0``.
    """
    n = fid.y1.size
    if zerofill_to < n:
        raise ValueError(f"zerofill_to={zerofill_to} is smaller than the {n} acquired samples")
    t = fid.times_real_s
    dt = float(np.mean(np.diff(t)))
    z = fid.complex * apodization(t, line_broadening_hz)
    X = np.fft.fft(z, zerofill_to)
    f_hz = np.fft.fftfreq(zerofill_to, dt)
    X = X * np.exp(-1j * (theta + 2 * np.pi * f_hz * (tau + t[0])))
    ppm = fid.acq.omega0_ppm + f_hz / fid.acq.ref_freq_hz_per_ppm
    order = np.argsort(-ppm, kind="stable")
    return Spectrum(ppm[order], X.real[order])


def spectral_noise_sd(fid: FidRecord, line_broadening_hz: float, v: float) -> float:
    """Per-bin sd of the real spectrum produced by ``preprocess`` for channel noise ``v``."""
    w = apodization(fid.times_real_s, line_broadening_hz)
    return float(np.sqrt(v * np.sum(w ** 2)))


def baseline_correct(spec: Spectrum, poly_order: int = 3, exclusion=()) -> Spectrum:
    """Subtract a least-squares polynomial fitted outside the exclusion windows."""
    if poly_order < 0:
        raise ValueError("poly_order must be >= 0")
    keep = np.ones(spec.freq_axis_ppm.size, bool)
    for w in exclusion:
        keep &= ~spec.mask(w.lo_ppm, w.hi_ppm)
    if keep.sum() < poly_order + 1:
        raise ValueError(
            f"{keep.sum()} baseline points cannot determine a degree-{poly_order} polynomial")
    ax = spec.freq_axis_ppm
    fit = np.polynomial.Polynomial.fit(ax[keep], spec.intensity[keep], poly_order)
    return spec.with_intensity(spec.intensity - fit(ax))


def integrate_peaks(spec: Spectrum, windows) -> list[PeakIntegral]:
    """Sum the spectrum over each window. Overlapping windows only warn."""
    windows = list(windows)
    lo_ax, hi_ax = spec.freq_axis_ppm.min(), spec.freq_axis_ppm.max()
    for a in range(len(windows)):
        for b in range(a + 1, len(windows)):
            if windows[a].overlaps(windows[b]):
                warnings.warn(f"peak windows {windows[a]} and {windows[b]} overlap", stacklevel=2)
    out = []
    for w in windows:
        if w.lo_ppm < lo_ax or w.hi_ppm > hi_ax:
            raise ValueError(f"window [{w.lo_ppm}, {w.hi_ppm}] ppm lies outside the spectrum")
        m = spec.mask(w.lo_ppm, w.hi_ppm)
        if not m.any():
            raise ValueError(f"window [{w.lo_ppm}, {w.hi_ppm}] ppm contains no bins")
        out.append(PeakIntegral(float(spec.intensity[m].sum()), int(m.sum())))
    return out


def ft_quantify(integrals, windows, table: SpeciesTable, sigma_S: float) -> FtQuantResult:
    """Concentrations from window integrals.

    I_j = sum_k (S_k / B_k) / K_j over the K_j windows of species j,
    C_j = I_j / sum I, with error
    E_j = C_j sqrt((E_Ij / I_j)^2 + sum_j E_Ij^2 / (sum I)^2),
    E_Ij = sqrt(sum_k n_k sigma_S^2 / (K_j B_k)^2).
    Per-peak SNR is S_k / (B_k sigma_S).
    """
    windows = list(windows)
    integrals = list(integrals)
    if len(windows) != len(integrals):
        raise ValueError("one integral per window is required")
    if sigma_S < 0:
        raise ValueError("sigma_S must be >= 0")
    name_idx = {s.name: j for j, s in enumerate(table.species)}
    r = table.n_species
    S = np.array([p.S for p in integrals])
    n = np.array([p.n for p in integrals], float)
    B = np.empty(len(windows))
    sp = np.empty(len(windows), int)
    for k, w in enumerate(windows):
        if w.species not in name_idx:
            raise ValueError(f"window refers to unknown species {w.species!r}")
        sp[k] = name_idx[w.species]
        B[k] = table.species[sp[k]].lines[w.line_index].intensity_B
    K = np.bincount(sp, minlength=r).astype(float)
    if np.any(K == 0):
        missing = [table.names[j] for j in np.flatnonzero(K == 0)]
        raise ValueError(f"no peak window for species {missing}")
    I = np.bincount(sp, weights=S / B, minlength=r) / K
    total = I.sum()
    if not total > 0:
        raise ValueError(f"sum of species intensities is {total}; cannot normalize")
    E_I = np.sqrt(np.bincount(sp, weights=n * sigma_S ** 2 / (K[sp] * B) ** 2, minlength=r))
    C = I / total
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(I != 0, E_I / np.abs(I), np.inf if sigma_S > 0 else 0.0)
    E = np.abs(C) * np.sqrt(rel ** 2 + np.sum(E_I ** 2) / total ** 2)
    with np.errstate(divide="ignore"):
        snr = S / (B * sigma_S) if sigma_S > 0 else np.full(S.shape, np.inf)
    return FtQuantResult(table.names, C, E, I, E_I, S, snr)


def estimate_sigma_S(spec: Spectrum, signal_free_region: tuple[float, float], windows=(),
                     min_bins: int = 50) -> float:
    """Sample sd of the spectrum inside a region free of peaks."""
    lo, hi = signal_free_region
    for w in windows:
        if w.lo_ppm < hi and lo < w.hi_ppm:
            raise ValueError(f"noise region [{lo}, {hi}] overlaps peak window {w}")
    m = spec.mask(lo, hi)
    if m.sum() < min_bins:
        raise ValueError(f"noise region holds {m.sum()} bins; need at least {min_bins}")
    return float(np.std(spec.intensity[m], ddof=1))


@dataclass(frozen=True)
class FtPipeline:
    """Parameters of the conventional pipeline, shared by the harness and the CLI."""

    line_broadening_hz: float = 1.0
    zerofill_to: int = 16384
    poly_order: int = 3
    half_width_ppm: float = 0.5
    noise_region_ppm: tuple[float, float] = (-250.0, -50.0)

    def spectrum(self, fid: FidRecord, windows, theta=0.0, tau=0.0) -> Spectrum:
        spec = preprocess(fid, self.line_broadening_hz, self.zerofill_to, theta, tau)
        return baseline_correct(spec, self.poly_order, windows)

    def run(self, fid: FidRecord, table: SpeciesTable, windows, theta=0.0, tau=0.0,
            sigma_S: float | None = None) -> tuple[FtQuantResult, Spectrum]:
        spec = self.spectrum(fid, windows, theta, tau)
        if sigma_S is None:
            sigma_S = estimate_sigma_S(spec, self.noise_region_ppm, windows)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ints = integrate_peaks(spec, windows)
        return ft_quantify(ints, windows, table, sigma_S), spec
