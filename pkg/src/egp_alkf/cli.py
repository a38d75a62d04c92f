"""Command-line front end.

Subcommands
-----------
egp-demo   EGP regression on sin(4 pi x) with uncertain inputs.
alkf       Vehicle experiment: ALKF vs a Kalman filter that ignores the drag.
compare    Multi-seed MSE table with ALKF/KF ratios.

Exit codes: 0 success, 1 numerical failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import svgplot
from .demo import DemoConfig, DemoResult, VARIANTS, run_demo
from .errors import ConfigError, EstimationError
from .sim import (
    VehicleScenario,
    build_model,
    default_kernel,
    mse,
    run_alkf,
    run_baseline_kf,
    simulate,
)

SNAPSHOT_TIMES = (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)

CSV_SCHEMAS = """\
CSV outputs (header row always present, numbers with 17 significant digits):
  egp_demo.csv      x_star, mean, variance, true_value
  trace.csv         t, p_true, v_true, p_meas, kf_p, kf_v, kf_p_3sigma, kf_v_3sigma,
                    alkf_p, alkf_v, alkf_p_3sigma, alkf_v_3sigma
  mse.csv           filter, position_mse, velocity_mse   (rows: KF, ALKF)
  gp_snapshots.csv  t, v, mean, mean_3sigma, true_drag
  compare.csv       seed, kf_position_mse, kf_velocity_mse, alkf_position_mse,
                    alkf_velocity_mse, ratio_position, ratio_velocity
                    (one row per seed, then a row with seed=mean holding mean
                    MSEs and the ratio of the means)

Config file: one key = value per line, '#' starts a comment. Keys:
  kernel.length_scale kernel.sigma_f kernel.sigma_n
  filter.max_history
  sim.h sim.duration sim.drag_coeff sim.seed sim.q_vel_std sim.r_std
  sim.p0_std sim.pin_initial
  out.dir out.svg
Flags override file values. EGP_ALKF_OUT is the fallback output directory.
"""


@dataclass(frozen=True)
class RunConfig:
    length_scale: float | None = None  # None: command default
    sigma_f: float = 1.0
    sigma_n: float = 0.1
    max_history: int | None = None
    h: float = 0.02
    duration: float = 2.0
    drag_coeff: float = 100.0
    seed: int = 0
    q_vel_std: float = 0.01
    r_std: float = 0.001
    p0_std: float = 0.2
    pin_initial: bool = False
    out_dir: str = "."
    svg: bool = True


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(s: str):
    return None if s.strip().lower() in ("none", "") else int(s)


CONFIG_KEYS = {
    "kernel.length_scale": ("length_scale", float),
    "kernel.sigma_f": ("sigma_f", float),
    "kernel.sigma_n": ("sigma_n", float),
    "filter.max_history": ("max_history", _opt_int),
    "sim.h": ("h", float),
    "sim.duration": ("duration", float),
    "sim.drag_coeff": ("drag_coeff", float),
    "sim.seed": ("seed", int),
    "sim.q_vel_std": ("q_vel_std", float),
    "sim.r_std": ("r_std", float),
    "sim.p0_std": ("p0_std", float),
    "sim.pin_initial": ("pin_initial", _bool),
    "out.dir": ("out_dir", str),
    "out.svg": ("svg", _bool),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines into RunConfig field overrides."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name, conv = CONFIG_KEYS[key]
        try:
            out[name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def parse_seeds(spec: str) -> list[int]:
    """'N' means seeds 0..N-1; 'a,b,c' is an explicit list."""
    try:
        if "," in spec:
            seeds = [int(s) for s in spec.split(",") if s.strip()]
        else:
            n = int(spec)
            if n < 1:
                raise ValueError
            seeds = list(range(n))
    except ValueError as exc:
        raise ConfigError(f"--seeds expects N or a,b,c; got {spec!r}") from exc
    if not seeds:
        raise ConfigError("--seeds is empty")
    return seeds


def resolve_config(args) -> RunConfig:
    values = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        values.update(parse_config_text(text, args.config))
    if "out_dir" not in values and os.environ.get("EGP_ALKF_OUT"):
        values["out_dir"] = os.environ["EGP_ALKF_OUT"]
    if args.out_dir is not None:
        values["out_dir"] = args.out_dir
    if args.seed is not None:
        values["seed"] = args.seed
    if args.no_svg:
        values["svg"] = False
    cfg = RunConfig(**values)
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigError("--steps must be positive")
        cfg = replace(cfg, duration=args.steps * cfg.h)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg.h > 0, "sim.h must be positive"),
        (cfg.duration >= cfg.h, "sim.duration must cover at least one step"),
        (cfg.length_scale is None or cfg.length_scale > 0, "kernel.length_scale must be positive"),
        (cfg.sigma_f > 0, "kernel.sigma_f must be positive"),
        (cfg.sigma_n >= 0, "kernel.sigma_n must be nonnegative"),
        (cfg.q_vel_std >= 0, "sim.q_vel_std must be nonnegative"),
        (cfg.r_std >= 0, "sim.r_std must be nonnegative"),
        (cfg.p0_std > 0, "sim.p0_std must be positive"),
        (cfg.max_history is None or cfg.max_history >= 1, "filter.max_history must be >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


# -- CSV ----------------------------------------------------------------------


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- egp-demo -----------------------------------------------------------------


def _demo_svg(res: DemoResult, path: Path) -> None:
    sd3 = 3.0 * np.sqrt(res.variance)
    pan = svgplot.Panel(title=f"EGP regression ({res.variant})", xlabel="x", ylabel="g(x)")
    pan.band(res.x_star, res.mean - sd3, res.mean + sd3)
    pan.line(res.x_star, res.true_value, "#d62728", "sin 4πx")
    pan.line(res.x_star, res.mean, "#1f77b4", "EGP mean ± 3σ")
    pan.scatter(res.x_train_sample, res.g_train, "#1f77b4", "training samples")
    svgplot.write(path, pan)


def cmd_egp_demo(cfg: RunConfig, variant: str | None) -> int:
    demo_cfg = DemoConfig(
        length_scale=0.1 if cfg.length_scale is None else cfg.length_scale,
        sigma_f=cfg.sigma_f,
        sigma_n=cfg.sigma_n,
        seed=cfg.seed,
    )
    out = _out_dir(cfg)
    variants = [variant] if variant else ["train-uncertainty", "query-uncertainty"]
    for v in variants:
        res = run_demo(demo_cfg, v)
        d = out if variant else out / v
        d.mkdir(parents=True, exist_ok=True)
        write_csv(d / "egp_demo.csv", ["x_star", "mean", "variance", "true_value"],
                  zip(res.x_star, res.mean, res.variance, res.true_value))
        if cfg.svg:
            _demo_svg(res, d / "egp_demo.svg")
        print(f"egp-demo {v}: max |mean - truth| = {res.max_abs_error:.6g}")
    return 0


# -- alkf / compare -----------------------------------------------------------


@dataclass(frozen=True)
class SeedResult:
    seed: int
    kf_mse: np.ndarray
    alkf_mse: np.ndarray
    traj: object = None
    kf: object = None
    alkf: object = None


def scenario_from(cfg: RunConfig, seed: int | None = None) -> VehicleScenario:
    return VehicleScenario(
        h=cfg.h, duration=cfg.duration, drag_coeff=cfg.drag_coeff, q_vel_std=cfg.q_vel_std,
        r_std=cfg.r_std, p0_std=cfg.p0_std, seed=cfg.seed if seed is None else seed,
        pin_initial=cfg.pin_initial,
    )


def snapshot_grid(traj, n: int = 81) -> np.ndarray:
    v = traj.states[:, 1]
    span = max(v.max() - v.min(), 1e-3)
    return np.linspace(v.min() - 0.25 * span, v.max() + 0.25 * span, n)


def run_seed(cfg: RunConfig, seed: int, snapshots: bool = False) -> SeedResult:
    sc = scenario_from(cfg, seed)
    traj = simulate(sc)
    model = build_model(sc)
    kernel = default_kernel(0.04 if cfg.length_scale is None else cfg.length_scale,
                            cfg.sigma_f, cfg.sigma_n)
    kf = run_baseline_kf(traj, model, sc.x0, sc.P0)
    times = tuple(t for t in SNAPSHOT_TIMES if t <= sc.duration + 1e-9) if snapshots else ()
    alkf = run_alkf(traj, model, sc.x0, sc.P0, kernel, snapshot_times=times,
                    v_grid=snapshot_grid(traj) if snapshots else None,
                    max_history=cfg.max_history)
    # errors over steps 1..K; the initial estimate is the same prior for both
    truth = traj.states[1:]
    return SeedResult(seed, mse(kf.means[1:], truth), mse(alkf.trace.means[1:], truth),
                      traj, kf, alkf)


def _trace_rows(res: SeedResult):
    tr, kf, al = res.traj, res.kf, res.alkf.trace
    ksd, asd = 3.0 * kf.std, 3.0 * al.std
    for k in range(len(tr.t)):
        yield (tr.t[k], tr.states[k, 0], tr.states[k, 1], tr.measurements[k, 0],
               kf.means[k, 0], kf.means[k, 1], ksd[k, 0], ksd[k, 1],
               al.means[k, 0], al.means[k, 1], asd[k, 0], asd[k, 1])


def _snapshot_rows(res: SeedResult, drag):
    for t, (v, m, var) in sorted(res.alkf.snapshots.items()):
        sd3 = 3.0 * np.sqrt(var)
        for i in range(len(v)):
            yield (t, v[i], m[i], sd3[i], drag(v[i]))


def _alkf_svgs(res: SeedResult, out: Path, drag) -> None:
    tr, kf, al = res.traj, res.kf, res.alkf.trace
    for idx, name, unit in ((0, "position", "p"), (1, "velocity", "v")):
        pan = svgplot.Panel(title=f"{name} estimate", xlabel="t [s]", ylabel=unit)
        pan.band(tr.t, kf.means[:, idx] - 3 * kf.std[:, idx], kf.means[:, idx] + 3 * kf.std[:, idx], "#f4b183")
        pan.band(tr.t, al.means[:, idx] - 3 * al.std[:, idx], al.means[:, idx] + 3 * al.std[:, idx], "#9dc3e6")
        pan.line(tr.t, tr.states[:, idx], "black", "truth")
        pan.line(tr.t, kf.means[:, idx], "#ff7f0e", "KF", dashed=True)
        pan.line(tr.t, al.means[:, idx], "#1f77b4", "ALKF")
        svgplot.write(out / f"trace_{name}.svg", pan)
    pan = svgplot.Panel(title="learned drag at snapshot times", xlabel="v", ylabel="Δ(v)")
    for i, (t, (v, m, var)) in enumerate(sorted(res.alkf.snapshots.items())):
        color = svgplot.PALETTE[i % len(svgplot.PALETTE)]
        pan.band(v, m - 3 * np.sqrt(var), m + 3 * np.sqrt(var), color)
        pan.line(v, m, color, f"t = {t:g}")
    if res.alkf.snapshots:
        v = next(iter(res.alkf.snapshots.values()))[0]
        pan.line(v, drag(v), "black", "true drag", dashed=True)
    svgplot.write(out / "gp_snapshots.svg", pan)


def print_mse_table(kf_mse, alkf_mse) -> None:
    print(f"{'':6s} {'position':>14s} {'velocity':>14s}")
    print(f"{'KF':6s} {kf_mse[0]:14.5e} {kf_mse[1]:14.5e}")
    print(f"{'ALKF':6s} {alkf_mse[0]:14.5e} {alkf_mse[1]:14.5e}")


def cmd_alkf(cfg: RunConfig, seeds: list[int] | None) -> int:
    out = _out_dir(cfg)
    seeds = seeds or [cfg.seed]
    first = run_seed(cfg, seeds[0], snapshots=True)
    results = [first] + [run_seed(cfg, s) for s in seeds[1:]]
    drag = scenario_from(cfg).drag

    write_csv(out / "trace.csv",
              ["t", "p_true", "v_true", "p_meas", "kf_p", "kf_v", "kf_p_3sigma", "kf_v_3sigma",
               "alkf_p", "alkf_v", "alkf_p_3sigma", "alkf_v_3sigma"], _trace_rows(first))
    kf_mse = np.mean([r.kf_mse for r in results], axis=0)
    al_mse = np.mean([r.alkf_mse for r in results], axis=0)
    write_csv(out / "mse.csv", ["filter", "position_mse", "velocity_mse"],
              [("KF", *kf_mse), ("ALKF", *al_mse)])
    write_csv(out / "gp_snapshots.csv", ["t", "v", "mean", "mean_3sigma", "true_drag"],
              _snapshot_rows(first, drag))
    if cfg.svg:
        _alkf_svgs(first, out, drag)

    print_mse_table(kf_mse, al_mse)
    if len(results) > 1:
        ratios = np.array([r.alkf_mse / r.kf_mse for r in results])
        mu, sd = ratios.mean(0), ratios.std(0, ddof=1)
        print(f"ALKF/KF ratio over {len(results)} seeds: position {mu[0]:.4f} ± {sd[0]:.4f}, "
              f"velocity {mu[1]:.4f} ± {sd[1]:.4f}")
    return 0


def compare_rows(results):
    for r in results:
        yield (str(r.seed), *r.kf_mse, *r.alkf_mse, *(r.alkf_mse / r.kf_mse))
    kf = np.mean([r.kf_mse for r in results], axis=0)
    al = np.mean([r.alkf_mse for r in results], axis=0)
    yield ("mean", *kf, *al, *(al / kf))


def cmd_compare(cfg: RunConfig, seeds: list[int]) -> int:
    if len(seeds) < 2:
        raise ConfigError("compare needs at least 2 seeds")
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    results = [run_seed(cfg, s) for s in seeds]
    rows = list(compare_rows(results))
    write_csv(out / "compare.csv",
              ["seed", "kf_position_mse", "kf_velocity_mse", "alkf_position_mse",
               "alkf_velocity_mse", "ratio_position", "ratio_velocity"], rows)
    mean_row = rows[-1]
    print_mse_table(mean_row[1:3], mean_row[3:5])
    print(f"mean ALKF/KF ratio: position {mean_row[5]:.4f}, velocity {mean_row[6]:.4f} "
          f"({len(seeds)} seeds, {time.perf_counter() - t0:.1f} s)")
    return 0


# -- entry point --------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--out-dir", metavar="PATH", help="output directory (default: $EGP_ALKF_OUT or .)")
    common.add_argument("--seed", type=int, metavar="N", help="random seed")
    common.add_argument("--steps", type=int, metavar="N", help="number of time steps (sets sim.duration)")
    common.add_argument("--no-svg", action="store_true", help="skip SVG plots")

    p = _Parser(prog="egp-alkf", description=__doc__.split("\n\n")[0],
                epilog=CSV_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    d = sub.add_parser("egp-demo", parents=[common], epilog=CSV_SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       help="EGP regression demo on sin(4 pi x)")
    d.add_argument("--variant", choices=VARIANTS,
                   help="run one variant; by default both inflated variants run into subdirectories")
    a = sub.add_parser("alkf", parents=[common], epilog=CSV_SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       help="vehicle experiment: ALKF vs KF")
    a.add_argument("--seeds", metavar="N|a,b,c", help="aggregate MSE over several seeds")
    c = sub.add_parser("compare", parents=[common], epilog=CSV_SCHEMAS,
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       help="multi-seed MSE comparison")
    c.add_argument("--seeds", metavar="N|a,b,c", default="10", help="seeds (default 10: 0..9)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "egp-demo":
            return cmd_egp_demo(cfg, args.variant)
        seeds = parse_seeds(args.seeds) if args.seeds else None
        if args.command == "alkf":
            return cmd_alkf(cfg, seeds)
        return cmd_compare(cfg, seeds)
    except ConfigError as exc:
        print(f"egp-alkf: config error: {exc}", file=sys.stderr)
        return 2
    except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"egp-alkf: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
