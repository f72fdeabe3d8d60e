"""Seeded scenario builders.

Initial conditions must satisfy the pair requirements by construction (the
safety results assume legally initialized worlds), so every gap is drawn as
the pair's operational requirement times uniform[1.0, 2.0].  Vehicles with
an HV directly behind start with the tightened lead requirement already
established.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import distances as dist
from . import mpc
from .protocols import KindLimits
from .types import (LaneGeometry, LimitSet, Pose, ProtocolState, Vehicle,
                    VehicleKind, WorldState)


def pair_requirement_operational(v_f, v_l, kind_f, kind_l, hv_behind_f,
                                 kinds: KindLimits) -> float:
    """Gap the planner needs for (follower, lead) to start feasible."""
    h, d_min = kinds.h, kinds.d_min
    a_i, a_h = kinds.iv.a_min, kinds.hv.a_min
    if kind_f == VehicleKind.HV:
        return float(dist.d0s_req(v_f, v_l, a_h, h, d_min))
    req = 0.0
    if kind_l == VehicleKind.HV:
        req = float(dist.ds_req(v_f, a_h, h, d_min))
    else:
        req = float(dist.d0s_req(v_f, v_l, a_i, h, d_min))
    if hv_behind_f:
        req = max(req, float(dist.d1s_op_req(v_f, v_l, a_h, a_i, h, d_min)))
    return req


def _draw_objective(rng, v, v_des, req_parity, kinds: KindLimits):
    code = int(rng.integers(0, 4))
    floor = -kinds.iv.a_min * kinds.h * kinds.h / 2.0 + kinds.d_min
    if code == 0:
        return mpc.Follow(())  # cruise at v_des
    if code in (1, 2):
        d = max(floor, req_parity) * (1.0 + 0.5 * rng.random()) + v * kinds.h
        return (mpc.Join if code == 1 else mpc.Maintain)(float(d))
    base = max(floor, req_parity) * 2.0
    return mpc.Split((float(base), float(base * 1.02)))


def _braking_schedule(rng, n_vehicles, ids, duration_slots, rate_per_s, h):
    sched = {}
    for vid in ids:
        episodes = []
        t = 0.0
        while True:
            t += float(rng.exponential(1.0 / rate_per_s)) if rate_per_s > 0 else math.inf
            start = int(t / h)
            if start >= duration_slots:
                break
            length = int((0.5 + 1.5 * rng.random()) / h)
            episodes.append((start, start + length))
            t += length * h
        sched[vid] = episodes
    return sched


def _place_column(rng, n, iv_fraction, kinds: KindLimits, lane, start_id,
                  v_lo=0.0, v_hi=None, x_front=0.0, gap_factor=(1.0, 2.0)):
    """One lane of vehicles, front first, legally spaced."""
    v_hi = 0.8 * kinds.v_max if v_hi is None else v_hi
    kinds_draw = [VehicleKind.IV if rng.random() < iv_fraction else VehicleKind.HV
                  for _ in range(n)]
    vels = [float(v_lo + (v_hi - v_lo) * rng.random()) for _ in range(n)]
    vehicles = []
    x = x_front
    for i in range(n):
        kind, v = kinds_draw[i], vels[i]
        hv_behind = i + 1 < n and kinds_draw[i + 1] == VehicleKind.HV
        if i > 0:
            lead = vehicles[-1]
            req = pair_requirement_operational(v, lead.v_prev, kind, lead.kind,
                                               hv_behind, kinds)
            lo, hi = gap_factor
            x = lead.pose.x - req * (lo + (hi - lo) * rng.random())
        veh = Vehicle(
            id=start_id + i, kind=kind, pose=Pose(x, lane * 3.5, 0.0), v_prev=v,
            beta=lane, alpha=lane, limits=kinds.of(kind),
            v_des=float(2.0 + (v_hi - 2.0) * rng.random()),
            d1s_established=(kind == VehicleKind.IV and hv_behind),
        )
        vehicles.append(veh)
    return vehicles


def single_lane_world(seed: int, n: int, iv_fraction: float, kinds: KindLimits,
                      duration_s: float = 60.0, braking_rate: float = 0.02,
                      v_hi: Optional[float] = None, lane_width: float = 3.5):
    """Straight single-lane column with random maneuver objectives and
    seeded braking episodes.  Returns (world, braking_schedule)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    geo = LaneGeometry(0, 0, lane_width)
    vehicles = _place_column(rng, n, iv_fraction, kinds, 0, 0, v_hi=v_hi)
    for i, veh in enumerate(vehicles):
        if veh.kind != VehicleKind.IV:
            continue
        if i == 0:
            veh.objective = mpc.Follow(())
        else:
            lead = vehicles[i - 1]
            req = pair_requirement_operational(veh.v_prev, veh.v_prev, veh.kind,
                                               lead.kind, veh.d1s_established, kinds)
            veh.objective = _draw_objective(rng, veh.v_prev, veh.v_des, req, kinds)
    # geometry y for single lane: center at 0
    world = WorldState(vehicles, geo, kinds.h)
    sched = _braking_schedule(rng, n, [v.id for v in vehicles],
                              int(duration_s / kinds.h), braking_rate, kinds.h)
    return world, sched


def multi_lane_world(seed: int, kinds: KindLimits, lane_min: int = -1,
                     lane_max: int = 1, per_lane=(2, 5), iv_fraction: float = 0.6,
                     v_lo: float = 3.0, v_hi: float = 20.0,
                     lane_width: float = 3.5):
    """Three-lane (by default) world of legally spaced columns."""
    rng = np.random.Generator(np.random.PCG64(seed))
    geo = LaneGeometry(lane_min, lane_max, lane_width)
    vehicles = []
    next_id = 0
    for lane in range(lane_min, lane_max + 1):
        n = int(rng.integers(per_lane[0], per_lane[1] + 1))
        x_front = float(40.0 * rng.random())
        col = _place_column(rng, n, iv_fraction, kinds, lane, next_id,
                            v_lo=v_lo, v_hi=v_hi, x_front=x_front)
        for veh in col:
            veh.pose = Pose(veh.pose.x, geo.center_y(lane), 0.0)
            if veh.kind == VehicleKind.IV:
                veh.objective = mpc.Follow(())
        vehicles.extend(col)
        next_id += n
    world = WorldState(vehicles, geo, kinds.h)
    return world


def ring_world(seed: int, n: int, iv_fraction: float, kinds: KindLimits,
               spacing: float = 5.0, v0: float = 5.0, lane_width: float = 3.5):
    """Closed single-lane loop at uniform spacing and speed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    geo = LaneGeometry(0, 0, lane_width)
    L = n * spacing
    vehicles = []
    for i in range(n):
        kind = VehicleKind.IV if rng.random() < iv_fraction else VehicleKind.HV
        vehicles.append(Vehicle(
            id=i, kind=kind, pose=Pose((n - 1 - i) * spacing, 0.0, 0.0),
            v_prev=v0, beta=0, alpha=0, limits=kinds.of(kind), v_des=v0))
    return WorldState(vehicles, geo, kinds.h, ring_length=L)


def fig_five_world(kinds: KindLimits, lane_width: float = 3.5):
    """Six vehicles on three lanes: side-lane leaders wait on the center-lane
    HV; the HV changes lanes by its own rule once it has passed them."""
    geo = LaneGeometry(-1, 1, lane_width)

    def mk(vid, kind, lane, x, v, alpha=None, v_des=10.0):
        a = lane if alpha is None else alpha
        state = ProtocolState.FREE if a == lane else ProtocolState.WAIT
        return Vehicle(id=vid, kind=kind, pose=Pose(x, geo.center_y(lane), 0.0),
                       v_prev=v, beta=lane, alpha=a, state=state,
                       turn_signal=(kind == VehicleKind.HV and state != ProtocolState.FREE),
                       limits=kinds.of(kind), v_des=v_des)

    vehicles = [
        mk(0, VehicleKind.HV, 0, 10.0, 10.0, alpha=1, v_des=14.0),
        mk(1, VehicleKind.IV, 1, 22.0, 10.0, alpha=0, v_des=10.3),
        mk(2, VehicleKind.IV, -1, 18.0, 10.0, alpha=0),
        mk(3, VehicleKind.IV, 1, 5.0, 10.0),
        mk(4, VehicleKind.IV, 0, -7.0, 10.0),
        mk(5, VehicleKind.IV, -1, 1.0, 10.0),
    ]
    for v in vehicles:
        if v.kind == VehicleKind.IV:
            v.objective = mpc.Follow(())
    return WorldState(vehicles, geo, kinds.h)


def adversarial_world(seed: int, kinds: KindLimits, lane_width: float = 3.5):
    """Worlds built to violate: merge contention with gates off, an HV
    tailgater with the rule clamp off, or an illegally tight start.
    Returns (world, mode) with mode in {contention, tailgater, illegal}."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mode = ("contention", "tailgater", "illegal")[int(rng.integers(0, 3))]
    h, d_min = kinds.h, kinds.d_min
    if mode == "contention":
        geo = LaneGeometry(-1, 1, lane_width)
        v = 8.0 + 6.0 * rng.random()
        dx = 0.2 + 0.8 * rng.random()
        vehicles = [
            Vehicle(0, VehicleKind.IV, Pose(0.0, geo.center_y(1), 0.0), v, 1, 0,
                    ProtocolState.WAIT, limits=kinds.iv, v_des=v),
            Vehicle(1, VehicleKind.IV, Pose(dx, geo.center_y(-1), 0.0), v, -1, 0,
                    ProtocolState.WAIT, limits=kinds.iv, v_des=v),
        ]
        return WorldState(vehicles, geo, kinds.h), mode
    if mode == "tailgater":
        geo = LaneGeometry(0, 0, lane_width)
        v = 5.0 + 10.0 * rng.random()
        lead = Vehicle(0, VehicleKind.IV, Pose(30.0, 0.0, 0.0), v, 0, 0,
                       limits=kinds.iv, v_des=v * 0.3)
        lead.objective = mpc.Follow(())  # lead slows toward its low v_des
        tail = Vehicle(1, VehicleKind.HV, Pose(0.0, 0.0, 0.0), v, 0, 0,
                       limits=kinds.hv, v_des=kinds.v_max)
        return WorldState([lead, tail], geo, kinds.h), mode
    geo = LaneGeometry(0, 0, lane_width)
    v = 4.0 + 8.0 * rng.random()
    req = float(dist.d0s_req(v, v, kinds.iv.a_min, h, d_min))
    lead = Vehicle(0, VehicleKind.IV, Pose(req * 0.5, 0.0, 0.0), v, 0, 0,
                   limits=kinds.iv, v_des=v)
    lead.objective = mpc.Follow(())
    rear = Vehicle(1, VehicleKind.IV, Pose(0.0, 0.0, 0.0), v, 0, 0,
                   limits=kinds.iv, v_des=v)
    rear.objective = mpc.Follow(())
    return WorldState([lead, rear], geo, kinds.h), mode


def paper_limits(h: float = 0.01, d_min: float = 2.0, v_max: float = 42.0,
                 theta_max: float = 0.7) -> KindLimits:
    """The published simulation parameters."""
    iv = LimitSet(a_min=-8.0, a_max=4.0, v_max=v_max, theta_min=-theta_max,
                  theta_max=theta_max, h=h, d_min=d_min)
    hv = LimitSet(a_min=-6.0, a_max=4.0, v_max=v_max, theta_min=-theta_max,
                  theta_max=theta_max, h=h, d_min=d_min)
    return KindLimits(iv=iv, hv=hv)
