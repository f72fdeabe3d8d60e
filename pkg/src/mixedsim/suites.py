"""Named property suites: randomized safety, platoon lifecycle, gate checks.

Each suite runs seeded scenarios and reports pass/fail per invariant with
counterexample seeds.  Parallelism across seeds is capped by the
SIMCTL_THREADS environment variable.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Optional

import numpy as np

from . import gen
from .engine import Engine, EngineParams
from .fastlane import FastLaneBatch
from .platoon import PlatoonManager
from .protocols import HvParams
from .types import VehicleKind


@dataclass
class SuiteReport:
    name: str
    checks: list = field(default_factory=list)  # (label, passed, counterexamples)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def text(self) -> str:
        lines = [f"suite: {self.name}"]
        for label, ok, ce in self.checks:
            status = "PASS" if ok else "FAIL"
            extra = f"  counterexample seeds: {ce[:10]}" if ce else ""
            lines.append(f"  [{status}] {label}{extra}")
        return "\n".join(lines) + "\n"


def worker_count() -> int:
    cap = os.environ.get("SIMCTL_THREADS")
    n = os.cpu_count() or 1
    if cap:
        n = max(1, min(n, int(cap)))
    return n


def _multi_lane_task(seed: int) -> int:
    kinds = gen.paper_limits()
    world = gen.multi_lane_world(seed=seed, kinds=kinds)
    params = EngineParams(iv_lane_request_rate=0.08,
                          hv=HvParams(v_des=12.0, lane_request_rate=0.05))
    result = Engine(world, kinds, params, seed=seed).run(12.0)
    return len(result.violations)


def safety_randomized(seeds: int = 100, duration: float = 30.0) -> SuiteReport:
    """Randomized legal worlds must produce zero monitor findings."""
    kinds = gen.paper_limits()
    report = SuiteReport("safety-randomized")
    rng = np.random.default_rng(7)

    batch = FastLaneBatch(kinds, HvParams(v_des=12.0))
    for seed in range(seeds):
        n = int(10 + 40 * rng.random())
        frac = float(rng.random())
        world, sched = gen.single_lane_world(seed, n, frac, kinds,
                                             duration_s=duration)
        batch.add_world(world, sched)
    res = batch.build().run(duration)
    bad = [int(i) for i in np.nonzero(res.violations)[0]]
    report.checks.append((f"single-lane randomized x{seeds}: zero violations",
                          not bad, bad))

    n_ml = max(4, seeds // 10)
    with Pool(worker_count()) as pool:
        counts = pool.map(_multi_lane_task, range(n_ml))
    bad = [i for i, c in enumerate(counts) if c]
    report.checks.append((f"multi-lane randomized x{n_ml}: zero violations",
                          not bad, bad))
    return report


def platoon_lifecycle(seeds: int = 5) -> SuiteReport:
    """Join -> maintain -> split cycle completes with legal gaps throughout."""
    kinds = gen.paper_limits()
    report = SuiteReport("platoon-lifecycle")
    bad_join, bad_split, bad_gap = [], [], []
    for seed in range(seeds):
        world, _ = gen.single_lane_world(seed + 500, 6, 1.0, kinds,
                                         duration_s=40.0, braking_rate=0.0,
                                         v_hi=12.0)
        for v in world.vehicles:
            v.objective = None
            v.v_des = 10.0
        mgr = PlatoonManager(kinds, 20)
        ids = [v.id for v in sorted(world.vehicles, key=lambda u: -u.pose.x)]
        platoon = mgr.form(ids[:4], 2.5, 0)
        engine = Engine(world, kinds, EngineParams(), seed=seed, platoons=mgr)
        half = None
        for k in range(4000):
            engine.step()
            if platoon.state == "Steady" and half is None:
                half = k
                mgr.request_split(platoon, 2, slot=k)
        if half is None:
            bad_join.append(seed)
            continue
        if platoon.id in mgr.platoons:
            bad_split.append(seed)
        if engine.min_gap < kinds.d_min - 1e-9:
            bad_gap.append(seed)
    report.checks.append(("join converges to steady spacing", not bad_join, bad_join))
    report.checks.append(("split partitions the platoon", not bad_split, bad_split))
    report.checks.append(("gaps never fall below the standstill gap",
                          not bad_gap, bad_gap))
    return report


def _adversarial_task(seed: int) -> int:
    kinds = gen.paper_limits()
    world, mode = gen.adversarial_world(seed, kinds)
    params = EngineParams(gates_enabled=(mode != "contention"),
                          hv_rule_respecting=(mode != "tailgater"))
    result = Engine(world, kinds, params, seed=seed).run(10.0)
    return len(result.violations)


def lanechange_gates(seeds: int = 50) -> SuiteReport:
    """Adversarial scenarios must each be caught by the monitor (the suite
    demonstrates the monitor detects what the gates prevent)."""
    report = SuiteReport("lanechange-gates")
    with Pool(worker_count()) as pool:
        counts = pool.map(_adversarial_task, range(seeds))
    silent = [i for i, c in enumerate(counts) if c == 0]
    report.checks.append((f"adversarial x{seeds}: every scenario produces "
                          "at least one violation", not silent, silent))
    return report


SUITES = {
    "safety-randomized": safety_randomized,
    "platoon-lifecycle": platoon_lifecycle,
    "lanechange-gates": lanechange_gates,
}


def run_suite(name: str, seeds: Optional[int] = None) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    fn = SUITES[name]
    return fn(seeds) if seeds is not None else fn()
