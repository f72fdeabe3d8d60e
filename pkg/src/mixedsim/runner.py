"""Scenario execution and artifact emission."""
from __future__ import annotations

import os
from typing import Optional

from .config import ScenarioConfig
from .engine import TRACE_HEADER, Engine, RunResult, measure_throughput
from .platoon import PlatoonManager, consecutive_iv_runs


def _g9(x) -> str:
    if isinstance(x, float):
        return "%.9g" % x
    return str(x)


def write_trace_csv(path: str, rows):
    with open(path, "w") as f:
        f.write(",".join(TRACE_HEADER) + "\n")
        for row in rows:
            f.write(",".join(_g9(v) for v in row) + "\n")


def write_violations_csv(path: str, violations):
    with open(path, "w") as f:
        f.write("t,kind,id_a,id_b,measured,required\n")
        for v in violations:
            f.write("%s,%s,%s,%s,%s,%s\n" % (
                _g9(v.t), v.kind, v.id_a,
                v.id_b if v.id_b is not None else -1,
                _g9(v.measured), _g9(v.required)))


def summary_text(cfg: ScenarioConfig, result: RunResult,
                 throughput: Optional[float] = None) -> str:
    s = result.summary()
    lines = [
        "scenario summary",
        "----------------",
        f"duration_s            {cfg.duration}",
        f"seed                  {cfg.seed}",
        f"vehicles              {len(cfg.vehicles) if cfg.vehicles else (cfg.generator or {}).get('count', '?')}",
        f"violations            {s['violations']}",
        f"lane_changes_completed {s['lane_changes_completed']}",
        f"min_gap_m             {_g9(s['min_gap'])}",
    ]
    if throughput is not None:
        lines.append(f"throughput_veh_per_h  {_g9(throughput)}")
    return "\n".join(lines) + "\n"


def run_scenario(cfg: ScenarioConfig, out_dir: Optional[str] = None):
    """Execute one config.  Returns (result, throughput | None).

    Writes trace.csv, violations.csv and summary.txt under out_dir when
    given; nothing is written before the run finished, so a failed config
    leaves no partial artifacts.
    """
    world, sched = cfg.build_world()
    kinds = cfg.kinds()
    platoons = None
    if cfg.platoon_auto_form:
        platoons = PlatoonManager(kinds, cfg.horizon)
        for lane in range(world.geometry.lane_min, world.geometry.lane_max + 1):
            for run in consecutive_iv_runs(world, lane):
                platoons.form(run, cfg.platoon_spacing, lane)
    engine = Engine(world, kinds, cfg.engine_params(), seed=cfg.seed,
                    platoons=platoons, braking_schedule=sched)
    result = engine.run(cfg.duration)
    throughput = None
    if cfg.sensor_x is not None:
        start = cfg.duration * 0.5
        throughput = measure_throughput(result.crossings, cfg.sensor_x,
                                        start, cfg.duration)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_trace_csv(os.path.join(out_dir, "trace.csv"), result.trace)
        write_violations_csv(os.path.join(out_dir, "violations.csv"),
                             result.violations)
        with open(os.path.join(out_dir, "summary.txt"), "w") as f:
            f.write(summary_text(cfg, result, throughput))
    return result, throughput
