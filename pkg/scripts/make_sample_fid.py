"""Regenerate the bundled 30/70 sample FID (SNR 26 on the weakest butanone line, seed 7)."""
import sys

from bayesnmr.cli import main
from bayesnmr.io import BUNDLED_FID, data_path

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else str(data_path(BUNDLED_FID))
    main(["simulate", "--mix", "0.3,0.7", "--snr", "26", "--seed", "7", "--out", out])
