"""Single vehicle run: state traces and learned drag snapshots at six times.

Prints band coverage of the true drag and mean band width per snapshot,
both over the visited velocity range.

Usage: python3 scripts/run_learning_snapshots.py [--seed 0] [--out-dir out/alkf]
"""

import argparse
import sys

import numpy as np

from egp_alkf.cli import RunConfig, main, run_seed
from egp_alkf.sim import VehicleScenario

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out/alkf")
    args = ap.parse_args()
    res = run_seed(RunConfig(), args.seed, snapshots=True)
    v_true = res.traj.states[:, 1]
    drag = VehicleScenario().drag
    for t, (v, mu, var) in sorted(res.alkf.snapshots.items()):
        vis = (v >= v_true.min()) & (v <= v_true.max())
        sd = np.sqrt(var[vis])
        cover = np.mean(np.abs(mu[vis] - drag(v[vis])) <= 3 * sd)
        print(f"t = {t:3.1f}  coverage {cover:.3f}  mean 3-sigma band width {6 * sd.mean():.3f}")
    sys.exit(main(["alkf", "--seed", str(args.seed), "--out-dir", args.out_dir]))
