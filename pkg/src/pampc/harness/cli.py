"""Command line entry point: ``pampc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import DETECTORS, alpha_behavior, avoidance_monte_carlo, detect_bench, timing_experiment, visibility_experiment
from .results import emit_results, log_summary, write_json, write_log_csv, write_svg, write_table_csv
from .scenario import CONTROLLERS, default_scenario, load_scenario, visibility_suite
from .simulate import run_closed_loop

log = logging.getLogger("pampc")

EXIT_STRICT = 3


def _base(path: str | None):
    return load_scenario(path) if path else default_scenario()


def cmd_simulate(args) -> int:
    s = load_scenario(args.scenario)
    rollout = run_closed_loop(s, args.controller, args.seed)
    out = Path(args.out) / "simulate"
    emit_results([rollout], out, s.masts, stem=s.name, alpha_max=s.weights.alpha_max)
    summ = log_summary(rollout)
    log.info("%s/%s: %d steps, collisions %d, mean similarity %.3f", s.name, rollout.controller,
             summ["steps"], summ.get("collisions", 0), summ.get("mean_similarity", float("nan")))  # fmt: skip
    return EXIT_STRICT if args.strict and rollout.collided else 0


def cmd_avoidance_mc(args) -> int:
    base = _base(args.scenario)
    res = avoidance_monte_carlo(base, args.n, args.seed, workers=args.workers)
    out = Path(args.out) / "avoidance-mc"
    rows, alpha_rows = [], []
    for c, logs in res.logs.items():
        for i, lg in enumerate(logs):
            write_log_csv(lg, out / "logs" / f"{c}_{i:03d}.csv")
            rows.append([c, i, *res.starts[i], int(lg.collided), float(lg.column("clearance").min()), len(lg)])
            if c == "pampc" and not lg.collided:
                for ab in alpha_behavior(lg, base.with_(start=res.starts[i])):
                    alpha_rows.append([i, ab.mast, ab.closest_step, ab.peak, ab.median, ab.ratio,
                                       -1 if ab.clear_step is None else ab.clear_step,
                                       -1 if ab.return_steps is None else ab.return_steps])  # fmt: skip
    write_table_csv(out / "runs.csv", ["controller", "index", "x0", "y0", "z0", "collided", "min_clearance", "steps"], rows)
    write_table_csv(
        out / "alpha.csv",
        ["index", "mast", "closest_step", "peak", "median", "ratio", "clear_step", "return_steps"],
        alpha_rows,
    )
    write_json(res.summary(), out / "summary.json")
    for c, logs in res.logs.items():
        write_svg(logs, base.masts, out / f"{c}.svg", base.weights.alpha_max)
    summ = res.summary()
    for c in res.logs:
        log.info("%s: success rate %.2f", c, summ[c]["success_rate"])
    if args.strict and "pampc" in res.logs and res.success_rate("pampc") < 1.0:
        return EXIT_STRICT
    return 0


def cmd_visibility(args) -> int:
    if args.scenarios:
        files = sorted(Path(args.scenarios).glob("*.ini"))
        if not files:
            raise SystemExit(f"no scenario files in {args.scenarios}")
        scenarios = [load_scenario(f) for f in files]
    else:
        scenarios = visibility_suite()
    res = visibility_experiment(scenarios, workers=args.workers)
    out = Path(args.out) / "visibility"
    write_table_csv(out / "similarity.csv", ["scenario", *res.controllers],
                    [[name, *map(float, row)] for name, row in zip(res.scenarios, res.similarity)])  # fmt: skip
    for (name, c), lg in res.logs.items():
        write_log_csv(lg, out / "logs" / f"{name}_{c}.csv")
    write_json(res.summary(), out / "summary.json")
    for i, name in enumerate(res.scenarios):
        log.info("%s: %s", name, ", ".join(f"{c} {res.similarity[i, j]:.3f}" for j, c in enumerate(res.controllers)))
    if "classical" in res.controllers and "pampc" in res.controllers:
        log.info("relative improvement %.1f%%", 100 * res.improvement())
    collided = any(lg.collided for lg in res.logs.values())
    return EXIT_STRICT if args.strict and collided else 0


def cmd_timing(args) -> int:
    res = timing_experiment(_base(args.scenario), repetitions=args.reps)
    out = Path(args.out) / "timing"
    # wall-clock numbers are not reproducible, so only JSON is written
    write_json(res.summary(), out / "timing.json")
    for c, v in res.summary().items():
        log.info("%-10s update %.2f +- %.2f ms, solver %.2f ms", c, v["update_mean_ms"], v["update_std_ms"], v["solver_mean_ms"])
    return 0


def cmd_detect_bench(args) -> int:
    res = detect_bench(args.detector, args.n, args.seed, args.sigma)
    out = Path(args.out) / "detect-bench"
    cols = ["scene", "lines", "missed", "detections", "precision", "recall", "f1"]
    write_table_csv(out / f"{args.detector}.csv", cols, [[r[c] for c in cols] for r in res.records])
    write_json(res.summary(), out / f"{args.detector}.json")
    s = res.summary()
    log.info("%s: noiseless failures %d, mean F1 %.3f", args.detector, s["noiseless_failures"], s["mean_f1"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--strict", action="store_true", help="exit non-zero on any flagged collision")
    common.add_argument("-q", "--quiet", action="store_true")
    p = argparse.ArgumentParser(prog="pampc", description="Perception-aware MPC experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", parents=[common], help="closed-loop rollout of one scenario file")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--controller", choices=CONTROLLERS)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("avoidance-mc", parents=[common], help="Monte Carlo over sampled start points")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--scenario", help="base scenario (default: built-in mast row)")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_avoidance_mc)

    sp = sub.add_parser("visibility", parents=[common], help="line visibility, pampc against classical MPC")
    sp.add_argument("--scenarios", help="directory of scenario files (default: built-in suite)")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_visibility)

    sp = sub.add_parser("timing", parents=[common], help="update and solver time per controller")
    sp.add_argument("--reps", type=int, default=500)
    sp.add_argument("--scenario")
    sp.set_defaults(func=cmd_timing)

    sp = sub.add_parser("detect-bench", parents=[common], help="line detector benchmark on rendered scenes")
    sp.add_argument("--detector", choices=DETECTORS, default="hough")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sigma", type=float, default=2.0, help="pixel noise level")
    sp.set_defaults(func=cmd_detect_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    return int(args.func(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
