"""Time one marginal-likelihood evaluation against N+M at fixed r and fit a line."""
import argparse
import time

import numpy as np
from scipy import stats

from bayesnmr import io
from bayesnmr.inference import log_marginal_likelihood, vague_gamma
from bayesnmr.model import AcquisitionConfig, NoiseModel, NuisanceParams, simulate_fid

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="1000,2000,4000,8000,16000")
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()
    table = io.read_species()
    sizes = np.array([int(s) for s in args.sizes.split(",")])
    times = []
    for nm in sizes:
        acq = AcquisitionConfig(int(nm) // 2)
        psi = NuisanceParams.from_ppm(table.freqs_ppm, acq, 0.5, 5e-6, 50.0)
        fid = simulate_fid([0.3, 0.7], psi, NoiseModel(0.01), table, acq, 0)
        gamma = vague_gamma(fid, psi, table)
        log_marginal_likelihood(fid, psi, 0.01, gamma, None, table)
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            for _ in range(20):
                log_marginal_likelihood(fid, psi, 0.01, gamma, None, table)
            best = min(best, (time.perf_counter() - t0) / 20)
        times.append(best)
        print(f"N+M = {nm:6d}: {1e6 * best:8.1f} us")
    fit = stats.linregress(sizes, times)
    print(f"slope {1e9 * fit.slope:.2f} ns per sample, R^2 {fit.rvalue ** 2:.4f}")
