"""Domain types, unit conversion, basis construction and the FID simulator.

Frequencies are carried in rad/s everywhere inside the package; ppm only
appears at the I/O boundary through :func:`ppm_to_rad_s` and
:func:`rad_s_to_ppm`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Line:
    freq_ppm: float
    intensity_B: float


@dataclass(frozen=True)
class Species:
    name: str
    lines: tuple[Line, ...]


@dataclass(frozen=True)
class SpeciesTable:
    """Chemical species with their resonance lines and known intensities."""

    species: tuple[Species, ...]

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise ValueError("species table is empty")
        names = [s.name for s in self.species]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate species names in {names}")
        for s in self.species:
            if not s.lines:
                raise ValueError(f"species {s.name!r} has no lines")
            for ln in s.lines:
                if not ln.intensity_B > 0:
                    raise ValueError(
                        f"species {s.name!r}: intensity must be > 0, got {ln.intensity_B}")

    @classmethod
    def from_dict(cls, mapping: dict[str, Sequence[tuple[float, float]]]) -> "SpeciesTable":
        """Build from ``{name: [(ppm, B), ...]}``."""
        return cls(tuple(
            Species(name, tuple(Line(float(p), float(b)) for p, b in lines))
            for name, lines in mapping.items()))

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.species]

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_lines(self) -> int:
        return sum(len(s.lines) for s in self.species)

    @property
    def freqs_ppm(self) -> np.ndarray:
        return np.array([ln.freq_ppm for s in self.species for ln in s.lines])

    @property
    def intensities(self) -> np.ndarray:
        return np.array([ln.intensity_B for s in self.species for ln in s.lines])

    @property
    def line_species(self) -> np.ndarray:
        """Species index of every line, in flat line order."""
        return np.array([j for j, s in enumerate(self.species) for _ in s.lines], dtype=int)

    def line_labels(self) -> list[str]:
        return [f"{s.name}[{i}]" for s in self.species for i in range(len(s.lines))]

    def weight_matrix(self) -> np.ndarray:
        """(n_lines, n_species) matrix carrying B at (line, owning species)."""
        W = np.zeros((self.n_lines, self.n_species))
        W[np.arange(self.n_lines), self.line_species] = self.intensities
        return W

    def permuted(self, order: Sequence[int]) -> "SpeciesTable":
        return SpeciesTable(tuple(self.species[k] for k in order))

    def line_permutation(self, order: Sequence[int]) -> np.ndarray:
        """Flat line indices reordered consistently with ``permuted(order)``."""
        starts = np.cumsum([0] + [len(s.lines) for s in self.species])
        return np.concatenate([np.arange(starts[k], starts[k + 1]) for k in order])


@dataclass(frozen=True)
class AcquisitionConfig:
    n_samples: int = 4029
    dt_s: float = 25e-6
    ref_freq_hz_per_ppm: float = 75.0
    omega0_rad_s: float = 0.0

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise ValueError(f"n_samples must be an integer >= 2, got {self.n_samples}")
        if not self.dt_s > 0:
            raise ValueError(f"dt_s must be > 0, got {self.dt_s}")
        if not self.ref_freq_hz_per_ppm > 0:
            raise ValueError("ref_freq_hz_per_ppm must be > 0")
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt_s

    @property
    def omega0_ppm(self) -> float:
        return rad_s_to_ppm(self.omega0_rad_s, self)


@dataclass(frozen=True)
class NuisanceParams:
    """Frequencies (flat, table line order), global phase, delay and decay."""

    freqs_rad_s: np.ndarray
    theta_rad: float = 0.0
    tau_s: float = 0.0
    alpha_per_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "freqs_rad_s", _frozen(np.atleast_1d(self.freqs_rad_s)))
        if self.alpha_per_s < 0:
            raise ValueError(f"alpha_per_s must be >= 0, got {self.alpha_per_s}")

    def check(self, table: SpeciesTable) -> None:
        if self.freqs_rad_s.shape != (table.n_lines,):
            raise ValueError(
                f"psi carries {self.freqs_rad_s.size} frequencies, table has {table.n_lines} lines")

    @classmethod
    def from_ppm(cls, freqs_ppm, acq: AcquisitionConfig, theta_rad=0.0, tau_s=0.0,
                 alpha_per_s=0.0) -> "NuisanceParams":
        return cls(ppm_to_rad_s(np.asarray(freqs_ppm, float), acq), theta_rad, tau_s, alpha_per_s)

    def freqs_ppm(self, acq: AcquisitionConfig) -> np.ndarray:
        return rad_s_to_ppm(self.freqs_rad_s, acq)


@dataclass(frozen=True)
class NoiseModel:
    variance_v: float

    def __post_init__(self):
        if not self.variance_v > 0:
            raise ValueError(f"noise variance must be > 0, got {self.variance_v}")


@dataclass(frozen=True)
class FidRecord:
    """Two-channel sampled FID. Channels may have different time grids."""

    times_real_s: np.ndarray
    y1: np.ndarray
    times_imag_s: np.ndarray
    y2: np.ndarray
    acq: AcquisitionConfig = field(default_factory=AcquisitionConfig)

    def __post_init__(self):
        for name in ("times_real_s", "y1", "times_imag_s", "y2"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        if self.times_real_s.shape != self.y1.shape or self.y1.ndim != 1:
            raise ValueError("real channel: times and values differ in length")
        if self.times_imag_s.shape != self.y2.shape or self.y2.ndim != 1:
            raise ValueError("imaginary channel: times and values differ in length")
        for t in (self.times_real_s, self.times_imag_s):
            if t.size > 1 and not np.all(np.diff(t) > 0):
                raise ValueError("timestamps must be strictly increasing")

    @classmethod
    def from_complex(cls, z: np.ndarray, acq: AcquisitionConfig) -> "FidRecord":
        t = acq.times
        return cls(t, np.real(z), t, np.imag(z), acq)

    @property
    def shared_grid(self) -> bool:
        return (self.times_real_s.shape == self.times_imag_s.shape
                and np.array_equal(self.times_real_s, self.times_imag_s))

    @property
    def complex(self) -> np.ndarray:
        if not self.shared_grid:
            raise ValueError("channels are sampled on different grids")
        return self.y1 + 1j * self.y2

    def scaled(self, c: float) -> "FidRecord":
        return FidRecord(self.times_real_s, c * self.y1, self.times_imag_s, c * self.y2, self.acq)


def ppm_to_rad_s(freq_ppm, acq: AcquisitionConfig):
    return freq_ppm * acq.ref_freq_hz_per_ppm * 2 * np.pi


def rad_s_to_ppm(freq_rad_s, acq: AcquisitionConfig):
    return freq_rad_s / (acq.ref_freq_hz_per_ppm * 2 * np.pi)


def complex_basis(psi: NuisanceParams, table: SpeciesTable, omega0: float,
                  t: np.ndarray) -> np.ndarray:
    """Species basis as complex signals on ``t``; real part is the cosine basis."""
    psi.check(table)
    t = np.asarray(t, float)
    dw = psi.freqs_rad_s - omega0
    phase = np.outer(t + psi.tau_s, dw) + psi.theta_rad
    lines = np.exp(1j * phase) * np.exp(-psi.alpha_per_s * t)[:, None]
    return lines @ table.weight_matrix()


def basis_matrices(psi: NuisanceParams, table: SpeciesTable, acq: AcquisitionConfig,
                   times_real, times_imag) -> tuple[np.ndarray, np.ndarray]:
    """Cosine (real channel) and sine (imaginary channel) design matrices.

    Returns ``(Phi, Psi)`` of shapes (N, r) and (M, r), one column per species:
    ``Phi[n, j] = sum_i B_ij cos((w_ij - w0)(t_n + tau) + theta) exp(-alpha t_n)``
    and ``Psi`` the same with sine.
    """
    Phi = complex_basis(psi, table, acq.omega0_rad_s, times_real).real
    Psi = complex_basis(psi, table, acq.omega0_rad_s, times_imag).imag
    return Phi, Psi


def simulate_fid(a, psi: NuisanceParams, noise: NoiseModel | None, table: SpeciesTable,
                 acq: AcquisitionConfig, seed: int) -> FidRecord:
    """Draw a two-channel FID from the generative model.

    ``noise=None`` gives the noise-free signal. Both channels share the
    acquisition grid; each gets independent N(0, v) noise from a generator
    seeded with ``seed``.
    """
    a = np.asarray(a, float)
    if a.shape != (table.n_species,):
        raise ValueError(f"expected {table.n_species} amplitudes, got shape {a.shape}")
    t = acq.times
    z = complex_basis(psi, table, acq.omega0_rad_s, t) @ a
    y1, y2 = z.real.copy(), z.imag.copy()
    if noise is not None:
        rng = np.random.default_rng(seed)
        sd = np.sqrt(noise.variance_v)
        y1 += sd * rng.standard_normal(t.size)
        y2 += sd * rng.standard_normal(t.size)
    return FidRecord(t, y1, t, y2, acq)
