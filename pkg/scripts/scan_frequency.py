"""Log evidence along the first butanone frequency, other parameters at truth, at several SNRs."""
import argparse
import csv
import sys

import numpy as np

from bayesnmr import io
from bayesnmr.harness import count_local_maxima, likelihood_scan, snr_to_noise_v
from bayesnmr.model import AcquisitionConfig, NoiseModel, NuisanceParams, ppm_to_rad_s, simulate_fid

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--snr", default="26,5.9,2.1")
    ap.add_argument("--half-range-ppm", type=float, default=3.0)
    ap.add_argument("--points", type=int, default=601)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    table, acq = io.read_species(), AcquisitionConfig()
    truth = NuisanceParams.from_ppm(table.freqs_ppm, acq, 0.5, 5e-6, 50.0)
    offsets = np.linspace(-args.half_range_ppm, args.half_range_ppm, args.points)
    grid = truth.freqs_rad_s[0] + ppm_to_rad_s(offsets, acq)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["snr", "offset_ppm", "log_evidence"])
    for snr in (float(s) for s in args.snr.split(",")):
        v = snr_to_noise_v(snr, [0.3, 0.7], table, acq, truth)
        fid = simulate_fid([0.3, 0.7], truth, NoiseModel(v), table, acq, args.seed)
        rows = likelihood_scan(fid, table, truth, v, "freq[0]", grid)
        print(f"SNR {snr}: {count_local_maxima([r[1] for r in rows])} local maxima", file=sys.stderr)
        w.writerows([snr, repr(float(o)), repr(float(ll))] for o, (_, ll) in zip(offsets, rows))
