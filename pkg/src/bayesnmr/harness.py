"""Synthetic stress tests: SNR sweeps, likelihood scans, Bayes vs FT tables.

Noise level convention
----------------------
A target SNR is turned into a channel noise variance v through the FT
pipeline: the noise-free FID of the cell is transformed and phased with the
true (theta, tau), and for every line the B-normalized peak signal is
divided by the spectral noise sd that v would produce. The SNR of a
dataset is that of its weakest peak. Two peak-signal conventions exist:

* ``"height"`` (default): peak maximum inside the window over 2 sigma_S,
  the spectrometer-software style S/N;
* ``"integral"``: window sum over sigma_S, the same sum used for
  quantification.

sigma_S scales as sqrt(v), so v follows in closed form from one noise-free
transform.
"""
from __future__ import annotations

import csv
import io as _io
import logging
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy

from . import __version__
from .ft import FtPipeline, default_windows, spectral_noise_sd
from .inference import EvidenceObjective, vague_gamma
from .io import dumps
from .model import (AcquisitionConfig, FidRecord, NoiseModel, NuisanceParams, SpeciesTable,
                    ppm_to_rad_s, simulate_fid)
from .quantify import FitOptions, fit

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SNR_CONVENTIONS = ("height", "integral")


@dataclass(frozen=True)
class SweepConfig:
    """One mixture swept over SNR targets with seeded repetitions.

    ``band_rel`` sets the "within band" test to truth +- band_rel * truth for
    the first species (27-33% for 30%).
    """

    mixture: tuple[tuple[str, float], ...] = (("butanone", 0.3), ("cyclohexane", 0.7))
    snr_targets: tuple[float, ...] = (9.3, 5.9, 4.2)
    repetitions: int = 30
    freq_jitter_ppm: float = 3.0
    seed: int = 0
    which: str = "both"
    alpha_per_s: float = 50.0
    theta_rad: float = 0.5
    tau_s: float = 5e-6
    snr_convention: str = "height"
    band_rel: float = 0.1
    calibrated_B: bool = False
    fit_restarts: int = 3
    samples: int = 10000
    ft: FtPipeline = FtPipeline()
    acq: AcquisitionConfig = AcquisitionConfig()
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mixture", tuple((str(n), float(f)) for n, f in self.mixture))
        object.__setattr__(self, "snr_targets", tuple(float(s) for s in self.snr_targets))
        fr = [f for _, f in self.mixture]
        if not fr or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"mixture fractions must be >= 0 and sum to 1, got {fr}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.which not in ("bayes", "ft", "both"):
            raise ValueError("which must be 'bayes', 'ft' or 'both'")
        if self.snr_convention not in SNR_CONVENTIONS:
            raise ValueError(f"snr_convention must be one of {SNR_CONVENTIONS}")
        if any(not s > 0 for s in self.snr_targets):
            raise ValueError("SNR targets must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        if "ft" in d:
            d["ft"] = FtPipeline(**{**d["ft"], "noise_region_ppm": tuple(
                d["ft"].get("noise_region_ppm", FtPipeline.noise_region_ppm))})
        if "acq" in d:
            d["acq"] = AcquisitionConfig(**d["acq"])
        for k in ("mixture", "snr_targets"):
            if k in d:
                d[k] = tuple(tuple(x) if isinstance(x, list) else x for x in d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def amplitudes(self, table: SpeciesTable) -> np.ndarray:
        frac = dict(self.mixture)
        unknown = set(frac) - set(table.names)
        if unknown:
            raise ValueError(f"mixture names {sorted(unknown)} not in species table")
        return np.array([frac.get(n, 0.0) for n in table.names])


# noise level from SNR

def peak_signals(clean: FidRecord, table: SpeciesTable, windows, theta: float, tau: float,
                 pipeline: FtPipeline = FtPipeline(), convention: str = "height",
                 normalized: bool = True) -> np.ndarray:
    """Per-window peak signal of a noise-free FID under ``convention``.

    ``"height"`` gives half the window maximum (so that dividing by sigma_S
    yields height / 2 sigma_S); ``"integral"`` the window sum. With
    ``normalized`` each value is divided by its line's B.
    """
    if convention not in SNR_CONVENTIONS:
        raise ValueError(f"unknown SNR convention {convention!r}")
    spec = pipeline.spectrum(clean, windows, theta, tau)
    out = []
    for w in windows:
        m = spec.mask(w.lo_ppm, w.hi_ppm)
        seg = spec.intensity[m]
        s = 0.5 * float(seg.max()) if convention == "height" else float(seg.sum())
        if normalized:
            s /= table.species[table.names.index(w.species)].lines[w.line_index].intensity_B
        out.append(s)
    return np.array(out)


def snr_to_noise_v(target_snr: float, amplitudes, table: SpeciesTable, acq: AcquisitionConfig,
                   psi: NuisanceParams, pipeline: FtPipeline = FtPipeline(),
                   convention: str = "height", windows=None) -> float:
    """Channel noise variance putting the weakest peak at ``target_snr``."""
    if not target_snr > 0:
        raise ValueError("target SNR must be > 0")
    clean = simulate_fid(amplitudes, psi, None, table, acq, 0)
    if windows is None:
        windows = default_windows(table, pipeline.half_width_ppm, psi.freqs_ppm(acq))
    sig = peak_signals(clean, table, windows, psi.theta_rad, psi.tau_s, pipeline, convention)
    weakest = float(np.min(sig))
    if not weakest > 0:
        raise ValueError("weakest peak has no positive signal; SNR is undefined")
    sigma1 = spectral_noise_sd(clean, pipeline.line_broadening_hz, 1.0)
    return (weakest / (target_snr * sigma1)) ** 2


def measured_snr(fid: FidRecord, table: SpeciesTable, windows, theta: float, tau: float,
                 pipeline: FtPipeline = FtPipeline(), convention: str = "height",
                 normalized: bool = True) -> np.ndarray:
    """Per-window SNR of a noisy FID, sigma_S taken from the signal-free region."""
    from .ft import estimate_sigma_S

    spec = pipeline.spectrum(fid, windows, theta, tau)
    sigma = estimate_sigma_S(spec, pipeline.noise_region_ppm, windows)
    return peak_signals(fid, table, windows, theta, tau, pipeline, convention, normalized) / sigma


# likelihood scans

def _dim_setter(dim: str, table: SpeciesTable):
    labels = table.line_labels()
    if dim.startswith("freq[") and dim.endswith("]"):
        idx = int(dim[5:-1])
    elif dim.startswith("freq:"):
        if dim[5:] not in labels:
            raise ValueError(f"unknown line {dim[5:]!r}; expected one of {labels}")
        idx = labels.index(dim[5:])
    elif dim in ("theta", "tau", "alpha", "v"):
        idx = None
    else:
        raise ValueError(f"unknown scan dimension {dim!r}")
    if idx is not None and not 0 <= idx < table.n_lines:
        raise ValueError(f"line index {idx} out of range")
    return idx


def likelihood_scan(fid: FidRecord, table: SpeciesTable, psi_truth: NuisanceParams,
                    v_truth: float, dim: str, grid, gamma: float | None = None) -> list[tuple]:
    """``(value, log evidence)`` along ``dim`` with every other parameter at truth.

    ``dim`` is ``freq[i]``, ``freq:<species>[<k>]``, ``theta``, ``tau``,
    ``alpha`` or ``v``; frequency grid values are in rad/s.
    """
    idx = _dim_setter(dim, table)
    gamma = vague_gamma(fid, psi_truth, table) if gamma is None else gamma
    ev = EvidenceObjective(fid, table, gamma)
    rows = []
    for x in np.atleast_1d(np.asarray(grid, float)):
        psi, v = psi_truth, v_truth
        if idx is not None:
            f = psi.freqs_rad_s.copy()
            f[idx] = x
            psi = replace(psi, freqs_rad_s=f)
        elif dim == "theta":
            psi = replace(psi, theta_rad=float(x))
        elif dim == "tau":
            psi = replace(psi, tau_s=float(x))
        elif dim == "alpha":
            psi = replace(psi, alpha_per_s=float(x))
        else:
            v = float(x)
        rows.append((float(x), ev(psi, v)))
    return rows


def count_local_maxima(values) -> int:
    """Strict interior local maxima of a 1-D sequence (plateaus count once)."""
    y = np.asarray(values, float)
    keep = np.concatenate([[True], np.diff(y) != 0])
    y = y[keep]
    if y.size < 3:
        return 0
    return int(np.sum((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])))


# sweeps

def cell_seed(seed: int, *key) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def draw_truth(cfg: SweepConfig, table: SpeciesTable, rep: int) -> NuisanceParams:
    """Jittered truth of repetition ``rep``; shared by every SNR level."""
    rng = np.random.default_rng([cfg.seed, rep])
    jitter = rng.uniform(-cfg.freq_jitter_ppm, cfg.freq_jitter_ppm, table.n_lines)
    return NuisanceParams.from_ppm(table.freqs_ppm + jitter, cfg.acq, cfg.theta_rad, cfg.tau_s,
                                   cfg.alpha_per_s)


@dataclass
class CellResult:
    snr: float
    rep: int
    truth: np.ndarray
    v: float
    bayes: dict | None = None
    ft: dict | None = None
    error: str | None = None
    runtime_s: float = 0.0


def run_cell(cfg: SweepConfig, table: SpeciesTable, k_snr: int, rep: int) -> CellResult:
    import time

    t0 = time.perf_counter()
    snr = cfg.snr_targets[k_snr]
    a = cfg.amplitudes(table)
    truth = draw_truth(cfg, table, rep)
    windows = default_windows(table, cfg.ft.half_width_ppm, truth.freqs_ppm(cfg.acq))
    v = snr_to_noise_v(snr, a, table, cfg.acq, truth, cfg.ft, cfg.snr_convention, windows)
    fid = simulate_fid(a, truth, NoiseModel(v), table, cfg.acq, cell_seed(cfg.seed, k_snr, rep))
    cell = CellResult(snr, rep, a / a.sum(), v)
    try:
        if cfg.which in ("bayes", "both"):
            opts = FitOptions(seed=cell_seed(cfg.seed, k_snr, rep, 1), samples=cfg.samples,
                              restarts=cfg.fit_restarts)
            r = fit(fid, table, opts, truth.freqs_rad_s)
            cell.bayes = {
                "mean": [c.mean for c in r.concentrations],
                "sd": [c.sd for c in r.concentrations],
                "ci95": [[c.ci95_lo, c.ci95_hi] for c in r.concentrations],
                "freq_error_ppm": r.freq_error_ppm.tolist(),
                "v_hat": r.v_hat,
                "log_evidence": r.log_evidence,
                "evaluations": r.optimizer.evaluations,
            }
        if cfg.which in ("ft", "both"):
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                q, _ = cfg.ft.run(fid, table, windows, truth.theta_rad, truth.tau_s)
            cell.ft = {"C": q.C.tolist(), "E": q.E.tolist(), "snr": q.snr}
    except Exception as e:  # a failed run is data, not a crash
        log.warning("cell snr=%s rep=%d failed: %s", snr, rep, e)
        cell.error = f"{type(e).__name__}: {e}"
    cell.runtime_s = time.perf_counter() - t0
    return cell


@dataclass
class SweepResult:
    config: SweepConfig
    table: SpeciesTable
    cells: list[CellResult] = field(default_factory=list)

    def rows(self, snr: float) -> list[CellResult]:
        return [c for c in self.cells if c.snr == snr and c.error is None]

    def summary(self, snr: float, species: int = 0) -> dict:
        """Aggregate row (errors, widths, coverage, band fraction) for one SNR level."""
        cells = self.rows(snr)
        truth = float(self.cells[0].truth[species]) if self.cells else math.nan
        band = (truth * (1 - self.config.band_rel), truth * (1 + self.config.band_rel))
        out = {"snr": snr, "n_runs": len([c for c in self.cells if c.snr == snr]),
               "n_failed": len([c for c in self.cells if c.snr == snr and c.error])}
        bay = [c.bayes for c in cells if c.bayes is not None]
        if bay:
            fe = np.concatenate([b["freq_error_ppm"] for b in bay])
            m = np.array([b["mean"][species] for b in bay])
            s = np.array([b["sd"][species] for b in bay])
            pw = np.array([b["ci95"][species][1] - b["ci95"][species][0] for b in bay])
            out.update({
                "freq_err_mean": float(fe.mean()), "freq_err_sd": float(fe.std(ddof=1)) if fe.size > 1 else 0.0,
                "freq_err_abs_mean": float(np.abs(fe).mean()),
                "bayes_mean": float(m.mean()), "bayes_bias": float(m.mean() - truth),
                "ci_width_2sd": float(np.mean(4 * s)), "ci_width_pct": float(pw.mean()),
                "coverage_68": float(np.mean(np.abs(m - truth) <= s)),
                "coverage_95": float(np.mean(np.abs(m - truth) <= 2 * s)),
                "band_fraction": float(np.mean((m >= band[0]) & (m <= band[1]))),
                "evaluations_mean": float(np.mean([b["evaluations"] for b in bay])),
            })
        fts = [c.ft for c in cells if c.ft is not None]
        if fts:
            C = np.array([f["C"][species] for f in fts])
            E = np.array([f["E"][species] for f in fts])
            out.update({
                "ft_mean": float(C.mean()), "ft_bias": float(C.mean() - truth),
                "ft_coverage_95": float(np.mean(np.abs(C - truth) <= 2 * E)),
                "ft_band_fraction": float(np.mean((C >= band[0]) & (C <= band[1]))),
                "ft_snr_mean": float(np.mean([f["snr"] for f in fts])),
            })
        return out

    def table2(self, species: int = 0) -> list[dict]:
        return [self.summary(s, species) for s in self.config.snr_targets]


def run_sweep(cfg: SweepConfig, table: SpeciesTable | None = None) -> SweepResult:
    """Every (SNR, repetition) cell of ``cfg``; fails only if most runs fail."""
    if table is None:
        from .io import read_species

        table = read_species(calibrated=cfg.calibrated_B)
    keys = [(k, rep) for k in range(len(cfg.snr_targets)) for rep in range(cfg.repetitions)]
    job = lambda key: run_cell(cfg, table, *key)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            cells = list(ex.map(job, keys))
    else:
        cells = [job(key) for key in keys]
    cells.sort(key=lambda c: (cfg.snr_targets.index(c.snr), c.rep))
    failed = sum(c.error is not None for c in cells)
    if failed > 0.5 * len(cells):
        raise RuntimeError(f"{failed} of {len(cells)} sweep runs failed")
    return SweepResult(cfg, table, cells)


TABLE2_COLUMNS = ["snr", "n_runs", "n_failed", "freq_err_mean", "freq_err_sd", "freq_err_abs_mean",
                  "bayes_mean", "bayes_bias", "ci_width_2sd", "ci_width_pct", "coverage_68",
                  "coverage_95", "band_fraction", "evaluations_mean", "ft_mean", "ft_bias",
                  "ft_coverage_95", "ft_band_fraction", "ft_snr_mean"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def table2_csv(res: SweepResult) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE2_COLUMNS)
    for row in res.table2():
        w.writerow([_fmt(row.get(c)) for c in TABLE2_COLUMNS])
    return buf.getvalue()


def compare_csv(res: SweepResult) -> str:
    """Per-run estimates for Bayes-vs-FT comparison plots."""
    names = res.table.names
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["snr", "rep", "v"]
    for n in names:
        head += [f"truth_{n}", f"bayes_mean_{n}", f"bayes_sd_{n}", f"bayes_lo_{n}", f"bayes_hi_{n}",
                 f"ft_C_{n}", f"ft_E_{n}"]
    head += [f"freq_err_{lab}" for lab in res.table.line_labels()]
    head += ["evaluations", "error"]
    w.writerow(head)
    for c in res.cells:
        row = [_fmt(c.snr), c.rep, _fmt(c.v)]
        for j in range(len(names)):
            b, f = c.bayes, c.ft
            row += [_fmt(float(c.truth[j])),
                    _fmt(b["mean"][j]) if b else "", _fmt(b["sd"][j]) if b else "",
                    _fmt(b["ci95"][j][0]) if b else "", _fmt(b["ci95"][j][1]) if b else "",
                    _fmt(f["C"][j]) if f else "", _fmt(f["E"][j]) if f else ""]
        fe = c.bayes["freq_error_ppm"] if c.bayes else [None] * res.table.n_lines
        row += [_fmt(x) for x in fe]
        row += [c.bayes["evaluations"] if c.bayes else "", c.error or ""]
        w.writerow(row)
    return buf.getvalue()


def manifest(res: SweepResult) -> dict:
    cfg = res.config
    return {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "cell_seeds": {f"{s}:{r}": [cell_seed(cfg.seed, k, r), cell_seed(cfg.seed, k, r, 1)]
                       for k, s in enumerate(cfg.snr_targets) for r in range(cfg.repetitions)},
        "species": {s.name: [[ln.freq_ppm, ln.intensity_B] for ln in s.lines]
                    for s in res.table.species},
        "windows_half_width_ppm": cfg.ft.half_width_ppm,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def write_sweep(res: SweepResult, out_dir, timing: bool = False) -> None:
    """table2.csv, fig_compare.csv and manifest.json (plus timing.csv on request)."""
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table2.csv").write_text(table2_csv(res))
    (out / "fig_compare.csv").write_text(compare_csv(res))
    (out / "manifest.json").write_text(dumps(manifest(res)) + "\n")
    if timing:
        lines = ["snr,rep,runtime_s"] + [f"{c.snr!r},{c.rep},{c.runtime_s!r}" for c in res.cells]
        (out / "timing.csv").write_text("\n".join(lines) + "\n")


def scan_csv(rows) -> str:
    return "value,log_evidence\n" + "".join(f"{x!r},{y!r}\n" for x, y in rows)


def parse_grid(spec: str) -> np.ndarray:
    """``lo:hi:n`` -> n evenly spaced values (n >= 1)."""
    try:
        lo, hi, n = spec.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise ValueError(f"grid must look like lo:hi:n, got {spec!r}") from None
    if n < 1:
        raise ValueError("grid needs n >= 1")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def freq_grid_ppm_to_rad(grid_ppm, acq: AcquisitionConfig) -> np.ndarray:
    return ppm_to_rad_s(np.asarray(grid_ppm, float), acq)
