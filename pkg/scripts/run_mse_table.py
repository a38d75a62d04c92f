"""Multi-seed MSE table for the vehicle experiment, KF vs ALKF.

Usage: python3 scripts/run_mse_table.py [--seeds 10] [--out-dir out/mse_table]
"""

import argparse
import sys

from egp_alkf.cli import main

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="10")
    ap.add_argument("--out-dir", default="out/mse_table")
    args = ap.parse_args()
    sys.exit(main(["compare", "--seeds", args.seeds, "--out-dir", args.out_dir]))
