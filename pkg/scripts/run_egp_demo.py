"""Uncertain-input regression demo on sin(4 pi x), all three variants.

Prints the posterior variance at the locations the inflated inputs affect.

Usage: python3 scripts/run_egp_demo.py [--seed 0] [--out-dir out/egp_demo]
"""

import argparse
import sys

import numpy as np

from egp_alkf.cli import main
from egp_alkf.demo import VARIANTS, DemoConfig, run_demo

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", default="out/egp_demo")
    args = ap.parse_args()
    cfg = DemoConfig(seed=args.seed)
    for v in VARIANTS:
        res = run_demo(cfg, v)
        var = {x: res.variance[np.argmin(np.abs(res.x_star - x))] for x in (0.2, 0.4, 0.6, 0.72)}
        print(f"{v:18s} " + "  ".join(f"var({x:g}) = {s:.4f}" for x, s in var.items()))
    code = 0
    for v in VARIANTS:
        code |= main(["egp-demo", "--variant", v, "--seed", str(args.seed),
                      "--out-dir", f"{args.out_dir}/{v}"])
    sys.exit(code)
