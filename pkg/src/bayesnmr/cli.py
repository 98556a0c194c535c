"""Command line entry point: simulate, fit, ft-analyze, sweep, scan."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .ft import FtPipeline, PeakWindow, default_windows
from .harness import (SweepConfig, likelihood_scan, parse_grid, run_sweep, scan_csv,
                      snr_to_noise_v, write_sweep)
from .model import AcquisitionConfig, NoiseModel, NuisanceParams, ppm_to_rad_s, simulate_fid
from .quantify import FitOptions, fit


def _table(args):
    return io.read_species(args.species, calibrated=args.calibrated)


def _truth_from_args(args, table, acq):
    freqs = table.freqs_ppm if args.freqs_ppm is None else np.array(
        [float(x) for x in args.freqs_ppm.split(",")])
    if freqs.size != table.n_lines:
        raise SystemExit(f"--freqs-ppm needs {table.n_lines} values")
    return NuisanceParams.from_ppm(freqs, acq, args.theta, args.tau, args.alpha)


def cmd_simulate(args):
    table = _table(args)
    acq = AcquisitionConfig(args.n_samples, args.dt)
    mix = np.array([float(x) for x in args.mix.split(",")])
    if mix.size != table.n_species:
        raise SystemExit(f"--mix needs {table.n_species} fractions")
    psi = _truth_from_args(args, table, acq)
    if args.snr is not None:
        v = snr_to_noise_v(args.snr, mix, table, acq, psi, convention=args.snr_convention)
    else:
        v = args.noise_v
    fid = simulate_fid(mix, psi, NoiseModel(v) if v else None, table, acq, args.seed)
    io.write_fid(fid, args.out)
    print(f"wrote {args.out} (v = {v!r})", file=sys.stderr)


def cmd_fit(args):
    table = _table(args)
    fid = io.read_fid(args.fid)
    opts = FitOptions(seed=args.seed, samples=args.samples, restarts=args.restarts,
                      start=args.start)
    res = fit(fid, table, opts)
    out = res.to_dict(fid.acq)
    out["diagnostics"].pop("runtime_s", None)  # keep the output file reproducible
    io.write_json(out, args.out)
    for c in res.concentrations:
        print(f"{c.name}: {c.mean:.4f}  95% [{c.ci95_lo:.4f}, {c.ci95_hi:.4f}]", file=sys.stderr)


def _windows(args, table, centers=None):
    if args.windows is None:
        return default_windows(table, args.half_width, centers)
    obj = io.read_json(args.windows)
    return [PeakWindow(w["species"], int(w["line_index"]), float(w["lo_ppm"]), float(w["hi_ppm"]))
            for w in obj["windows"]]


def cmd_ft_analyze(args):
    table = _table(args)
    fid = io.read_fid(args.fid)
    pipe = FtPipeline(args.lb_hz, args.zerofill, args.poly_order, args.half_width)
    windows = _windows(args, table)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res, spec = pipe.run(fid, table, windows, args.theta, args.tau)
    out = {
        "species": table.names, "C": res.C, "E": res.E, "I": res.I, "E_I": res.E_I,
        "per_peak_S": res.per_peak_S, "snr_per_peak": res.snr_per_peak, "snr": res.snr,
        "windows": [vars(w) for w in windows],
        "pipeline": {"lb_hz": args.lb_hz, "zerofill": args.zerofill, "poly_order": args.poly_order},
        "warnings": [str(w.message) for w in caught],
    }
    io.write_json(out, args.out)
    if args.spectrum_csv:
        with open(args.spectrum_csv, "w") as fh:
            fh.write("ppm,intensity\n")
            fh.writelines(f"{p!r},{y!r}\n" for p, y in zip(spec.freq_axis_ppm.tolist(),
                                                         spec.intensity.tolist()))
    for n, c, e in zip(table.names, res.C, res.E):
        print(f"{n}: {c:.4f} +- {2 * e:.4f}", file=sys.stderr)


def cmd_sweep(args):
    cfg = SweepConfig.from_dict(io.read_json(args.config)) if args.config else SweepConfig()
    overrides = {}
    if args.repetitions is not None:
        overrides["repetitions"] = args.repetitions
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.snr is not None:
        overrides["snr_targets"] = tuple(float(x) for x in args.snr.split(","))
    if overrides:
        cfg = replace(cfg, **overrides)
    res = run_sweep(cfg)
    write_sweep(res, args.out, timing=args.timing)
    print(f"wrote {Path(args.out) / 'table2.csv'}", file=sys.stderr)


def cmd_scan(args):
    table = _table(args)
    fid = io.read_fid(args.fid)
    acq = fid.acq
    psi = _truth_from_args(args, table, acq)
    grid = parse_grid(args.grid)
    values = grid
    if args.dim.startswith("freq") and args.grid_units == "ppm":
        values = ppm_to_rad_s(grid, acq)
    # report the grid in the units it was given in
    rows = [(float(g), ll) for g, (_, ll) in
            zip(grid, likelihood_scan(fid, table, psi, args.noise_v, args.dim, values))]
    text = scan_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_species(p):
    p.add_argument("--species", default=None, help="species table JSON (default: bundled)")
    p.add_argument("--calibrated", action="store_true", help="use calibrated line intensities")


def _add_truth(p):
    p.add_argument("--freqs-ppm", default=None, help="comma-separated line frequencies")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--tau", type=float, default=5e-6)
    p.add_argument("--alpha", type=float, default=50.0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bayesnmr", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic two-channel FID")
    _add_species(p)
    _add_truth(p)
    p.add_argument("--mix", default="0.3,0.7")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--snr", type=float, default=None)
    g.add_argument("--noise-v", type=float, default=None)
    p.add_argument("--snr-convention", choices=["height", "integral"], default="height")
    p.add_argument("--n-samples", type=int, default=4029)
    p.add_argument("--dt", type=float, default=25e-6)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="Bayesian quantification of an FID")
    p.add_argument("--fid", required=True)
    _add_species(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--start", choices=["spectral", "tabulated"], default="spectral")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("ft-analyze", help="conventional FT quantification")
    p.add_argument("--fid", required=True)
    _add_species(p)
    p.add_argument("--lb-hz", type=float, default=1.0)
    p.add_argument("--zerofill", type=int, default=16384)
    p.add_argument("--poly-order", type=int, default=3)
    p.add_argument("--half-width", type=float, default=0.5)
    p.add_argument("--windows", default=None, help="JSON with a 'windows' list")
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--spectrum-csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ft_analyze)

    p = sub.add_parser("sweep", help="SNR sweep of Bayesian and FT pipelines")
    p.add_argument("--config", default=None, help="SweepConfig JSON")
    p.add_argument("--snr", default=None, help="comma-separated SNR targets")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--timing", action="store_true", help="also write wall-clock timing.csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("scan", help="log evidence along one parameter, others at truth")
    p.add_argument("--fid", required=True)
    _add_species(p)
    _add_truth(p)
    p.add_argument("--noise-v", type=float, required=True)
    p.add_argument("--dim", required=True, help="freq[i], freq:<species>[k], theta, tau, alpha or v")
    p.add_argument("--grid", required=True, help="lo:hi:n")
    p.add_argument("--grid-units", choices=["ppm", "rad/s"], default="ppm",
                   help="units of frequency grids")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_scan)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
