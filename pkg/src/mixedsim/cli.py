"""simctl: run scenarios, sweep throughput, run property suites.

Exit codes: 0 clean, 1 violations found, 2 configuration error.
"""
from __future__ import annotations

import argparse
import os
import sys
from multiprocessing import Pool

import numpy as np

from . import gen
from .config import ConfigError, load_config
from .fastlane import FastLaneBatch
from .protocols import HvParams
from .runner import run_scenario
from .suites import run_suite, worker_count


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out_dir = args.out or os.path.splitext(os.path.basename(args.config))[0] + ".out"
    try:
        result, throughput = run_scenario(cfg, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    from .runner import summary_text
    sys.stdout.write(summary_text(cfg, result, throughput))
    print(f"artifacts in {out_dir}/")
    if result.violations and not args.allow_violations:
        return 1
    return 0


def _cmd_validate(args) -> int:
    try:
        load_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    print(f"{args.config}: ok")
    return 0


def _throughput_point(task):
    frac, seeds, spacing, count, v_des = task
    kinds = gen.paper_limits()
    batch = FastLaneBatch(kinds, HvParams(v_des=v_des))
    for seed in seeds:
        world = gen.ring_world(seed, count, frac, kinds, spacing=5.0, v0=5.0)
        for v in world.vehicles:
            v.v_des = v_des
        batch.add_world(world, platoon_spacing=spacing)
    res = batch.build().run(90.0, sensor_x=1.0, window_start=30.0)
    return frac, float(res.throughput.mean()), int(res.total_violations())


def _parse_range(spec: str):
    lo, hi = spec.split("..")
    return float(lo), float(hi)


def _cmd_throughput(args) -> int:
    try:
        lo, hi = _parse_range(args.iv_fraction)
    except ValueError:
        print("expected --iv-fraction A..B", file=sys.stderr)
        return 2
    fracs = []
    f = lo
    while f <= hi + 1e-9:
        fracs.append(round(f, 6))
        f += args.step
    rng = np.random.default_rng(args.seed)
    tasks = []
    for frac in fracs:
        seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=args.seeds)]
        tasks.append((frac, seeds, args.platoon_spacing, args.count, args.v_des))
    with Pool(min(worker_count(), len(tasks))) as pool:
        rows = pool.map(_throughput_point, tasks)
    lines = ["iv_fraction,throughput_veh_per_h,violations"]
    total_viol = 0
    for frac, thr, viol in rows:
        lines.append("%.6g,%.9g,%d" % (frac, thr, viol))
        total_viol += viol
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 1 if total_viol else 0


def _cmd_suite(args) -> int:
    try:
        report = run_suite(args.name, args.seeds)
    except KeyError as e:
        print(str(e), file=sys.stderr)
        return 2
    sys.stdout.write(report.text())
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="simctl",
        description="Mixed-traffic microsimulator: scenarios, sweeps, suites.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario config")
    p.add_argument("config")
    p.add_argument("--out", help="artifact directory (default: <config>.out)")
    p.add_argument("--allow-violations", action="store_true",
                   help="exit 0 even when the monitor reports violations")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("validate", help="parse and validate a config")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("throughput", help="ring throughput vs IV fraction")
    p.add_argument("--iv-fraction", default="0.0..1.0", metavar="A..B")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--seeds", type=int, default=10,
                   help="seeds per fraction")
    p.add_argument("--platoon-spacing", type=float, default=2.5)
    p.add_argument("--count", type=int, default=40, help="vehicles per ring")
    p.add_argument("--v-des", type=float, default=12.0)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=_cmd_throughput)

    p = sub.add_parser("suite", help="run a named property suite")
    p.add_argument("name")
    p.add_argument("--seeds", type=int, default=None)
    p.set_defaults(fn=_cmd_suite)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
