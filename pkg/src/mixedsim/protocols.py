"""The decision layer: HV rules, IV following protocol, lane-change gates.

Design notes that apply throughout:

* Rules and gate conditions are evaluated exactly as published; where that
  leaves a vehicle-pair bound weaker than the bound the monitor will check
  immediately after a transition (this happens at low speeds, where the
  velocity-only stopping gap dips below the d_min-backed pair gap), the
  engine-facing gates add an explicit entry-clearance condition so a
  transition never creates an instantly-breached pair.
* A vehicle followed by an HV may brake only at a_h_min and must keep the
  tightened lead gap.  The tightening is not instantaneous: when an HV
  first appears behind, the vehicle enters a transition regime (objective
  overridden to open the gap, braking softened) and the tightened
  requirement is monitored only once the gap has actually been
  established.  The HV's own entry margin covers the transition.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from . import distances as dist
from . import mpc
from .kinematics import step_pose
from .sets import (SafetySets, effective_membership, nearest_follower,
                   nearest_lead)
from .types import (Control, LimitSet, Pose, ProtocolState, Vehicle,
                    VehicleKind, WorldState, completion_reached,
                    lane_membership)

log = logging.getLogger(__name__)

GATE_SLACK = 1e-6  # entry-clearance headroom; keeps fresh pairs off the boundary


@dataclass(frozen=True)
class KindLimits:
    """The two actuation envelopes plus their compatibility invariants."""

    iv: LimitSet
    hv: LimitSet

    def __post_init__(self):
        if not self.hv.a_min > self.iv.a_min:
            raise ValueError("HVs must brake less strongly than IVs (a_h_min > a_i_min)")
        for name in ("h", "d_min", "v_max"):
            if abs(getattr(self.iv, name) - getattr(self.hv, name)) > 1e-12:
                raise ValueError(f"kinds must share {name}")

    @property
    def h(self):
        return self.iv.h

    @property
    def d_min(self):
        return self.iv.d_min

    @property
    def v_max(self):
        return self.iv.v_max

    def of(self, kind: VehicleKind) -> LimitSet:
        return self.iv if kind == VehicleKind.IV else self.hv


@dataclass
class GateReport:
    passed: bool
    conditions: dict
    T_used: Optional[float] = None

    def margin(self, name: str) -> float:
        return self.conditions[name][1]


def eff_lead_velocity(lead: Vehicle) -> float:
    """Longitudinal velocity a lead contributes along the road.

    A vehicle with residual heading advances (and stops) shorter in x than
    its path speed; projecting the speed is conservative for the braking
    credit and exact for the one-slot advance of non-turning vehicles.
    """
    return lead.v_prev * math.cos(lead.pose.theta)


# ---------------------------------------------------------------------------
# Single-lane rules and following requirements
# ---------------------------------------------------------------------------

def hv_single_lane_separation(hv: Vehicle, lead: Vehicle) -> float:
    """Gap the single-lane rule obliges an HV to keep behind its lead."""
    lim = hv.limits
    return float(dist.d0s_req(hv.v_prev, lead.v_prev, lim.a_min, lim.h, lim.d_min))


@dataclass
class PairConstraint:
    """One lead this vehicle must plan against and be judged against.

    frozen means the lead's advance earns no credit (it is turning, so its
    longitudinal progress is not bounded below by its speed).
    """

    lead: Vehicle
    planner_specs: tuple
    monitor_specs: tuple
    frozen: bool = False


@dataclass
class FollowContext:
    """Resolved following situation for one vehicle this slot.

    pairs carries every constraining lead: always the nearest vehicle
    physically in the lane, plus (when present) the nearest signalling HV
    announcing entry from an adjacent lane.  The latter binds only once
    its gap is established; until then open_* steers a proportional
    gap-opening response.
    """

    lead: Optional[Vehicle]       # the lane lead the maneuver objective tracks
    pairs: tuple = ()
    label: str = "free_road"
    restricted: bool = False      # tightened requirement in force, brake at a_h only
    hv_behind: bool = False       # voluntary deceleration capped at a_h
    open_gap_to: Optional[float] = None
    open_lead: Optional[Vehicle] = None
    yield_active: bool = False


def _base_lead_specs(ego: Vehicle, lead: Vehicle, yield_active: bool,
                     kinds: KindLimits):
    h, d_min = kinds.h, kinds.d_min
    if yield_active or lead.kind == VehicleKind.HV:
        # The stopping-distance bound alone is not recursively feasible
        # around its d_min clamp (catching down to a slower lead eats the
        # floor), so the planner also rides the matched-rate pair bound;
        # the monitor keeps checking the published form only.
        spec = mpc.make_ds_spec(kinds.hv.a_min, h, d_min)
        hold = mpc.make_d0s_spec(kinds.hv.a_min, h, d_min)
        label = "yield_ds" if yield_active else "hv_lead_ds"
        return (spec, hold), (spec,), label
    spec = mpc.make_d0s_spec(kinds.iv.a_min, h, d_min)
    return (spec,), (spec,), "iv_lead_d0s"


def _nearest_physical_lead(ego: Vehicle, world: WorldState) -> Optional[Vehicle]:
    best, best_gap = None, None
    for c in world.vehicles:
        if c.id == ego.id or ego.beta not in lane_membership(c):
            continue
        gap = world.gap(ego, c)
        if gap <= 0.0:
            continue
        if best is None or gap < best_gap or (gap == best_gap and c.id < best.id):
            best, best_gap = c, gap
    return best


def _nearest_signalling_entrant(ego: Vehicle, world: WorldState) -> Optional[Vehicle]:
    """The nearest adjacent-lane HV ahead whose signal announces entry here."""
    best, best_gap = None, None
    for c in world.vehicles:
        if (c.id == ego.id or c.kind != VehicleKind.HV or not c.turn_signal
                or c.state != ProtocolState.WAIT or c.alpha != ego.beta
                or c.beta == ego.beta):
            continue
        gap = world.gap(ego, c)
        if gap <= 0.0:
            continue
        if best is None or gap < best_gap:
            best, best_gap = c, gap
    return best


def iv_following_requirement(iv: Vehicle, world: WorldState,
                             kinds: KindLimits,
                             hv_behind_override: Optional[bool] = None) -> FollowContext:
    """Following context for an IV in state free or wait.

    Always constrains the nearest vehicle physically in the lane (which
    includes processing vehicles straddling in or out); a signalling HV
    announcing entry from an adjacent lane becomes a second constraint
    once its gap is established.  hv_behind_override lets a platoon head
    inherit the whole-platoon braking restriction even though its direct
    follower is a member IV.
    """
    if iv.state == ProtocolState.PROCESSING:
        raise ValueError("following requirement applies to free/wait vehicles")
    from .sets import effectively_processing
    h, d_min = kinds.h, kinds.d_min
    if hv_behind_override is None:
        follower = nearest_follower(iv, world)
        hv_behind = follower is not None and follower.kind == VehicleKind.HV
    else:
        hv_behind = hv_behind_override
    if not hv_behind:
        iv.d1s_established = False

    pairs = []
    open_gap_to = open_lead = None
    yield_active = False
    label = "free_road"

    lead = _nearest_physical_lead(iv, world)
    if lead is not None:
        yield_active = effectively_processing(lead) and iv.beta in {lead.beta, lead.alpha}
        if yield_active:
            _warn_if_ds_weak(lead, kinds)
        planner, monitor, label = _base_lead_specs(iv, lead, yield_active, kinds)
        if hv_behind:
            op = mpc.make_d1s_spec(kinds.hv.a_min, kinds.iv.a_min, h, d_min,
                                   operational=True)
            printed = mpc.make_d1s_spec(kinds.hv.a_min, kinds.iv.a_min, h, d_min,
                                        operational=False)
            gap = world.gap(iv, lead)
            need = float(op.required(iv.v_prev, eff_lead_velocity(lead)))
            if not iv.d1s_established and gap >= need + iv.v_prev * h:
                iv.d1s_established = True
            if iv.d1s_established:
                if label == "iv_lead_d0s":
                    planner, monitor = (op,), (printed,)
                else:
                    planner, monitor = planner + (op,), monitor + (printed,)
                label += "+d1s"
            else:
                # Transition: base requirement stays; open toward the
                # tightened one at softened voluntary deceleration.
                open_gap_to, open_lead = need + 2.0 * iv.v_prev * h, lead
                label += "+opening"
        pairs.append(PairConstraint(lead, planner, monitor,
                                    frozen=(lead.state == ProtocolState.PROCESSING)))

    entrant = _nearest_signalling_entrant(iv, world)
    if entrant is None:
        iv.established_pairs.clear()
    else:
        iv.established_pairs.intersection_update({entrant.id})
        # An ungated announcement can appear at any gap; it binds only once
        # established at the frozen-obstacle form it will be planned at.
        req = float(dist.d0s_req(iv.v_prev, 0.0, kinds.hv.a_min, h, d_min))
        gap = world.gap(iv, entrant)
        if entrant.id in iv.established_pairs or gap >= req:
            iv.established_pairs.add(entrant.id)
            spec = mpc.make_ds_spec(kinds.hv.a_min, h, d_min)
            hold = mpc.make_d0s_spec(kinds.hv.a_min, h, d_min)
            pairs.append(PairConstraint(entrant, (spec, hold), (spec,)))
            label += "+entrant"
        else:
            if open_lead is None or gap < world.gap(iv, open_lead):
                open_gap_to, open_lead = req + 2.0 * iv.v_prev * h, entrant
            label += "+entrant_opening"

    restricted = hv_behind and iv.d1s_established
    return FollowContext(lead, tuple(pairs), label, restricted, hv_behind,
                         open_gap_to, open_lead, yield_active)


def _has_yielder(iv: Vehicle, world: WorldState) -> bool:
    from .sets import effectively_processing
    for c in world.vehicles:
        if c.id == iv.id or c.pose.x < iv.pose.x:
            continue
        if effectively_processing(c) and iv.beta in {c.beta, c.alpha}:
            return True
    return False


def _warn_if_ds_weak(lead: Vehicle, kinds: KindLimits):
    if not dist.ds_dominates_d0s(lead.v_prev, kinds.hv.a_min, kinds.h, kinds.d_min):
        log.debug("ds does not dominate d0s at lead velocity %.3f; "
                  "yield following is weaker than plain following here",
                  lead.v_prev)


def monitor_pair_requirement(follower: Vehicle, lead: Vehicle,
                             kinds: KindLimits,
                             lead_processing: Optional[bool] = None) -> float:
    """The printed bound the monitor holds a (follower, lead) pair to.

    lead_processing overrides the lead's state for hypothetical checks
    (gate entry clearance evaluates the pair as it will stand after the
    transition).
    """
    from .sets import effectively_processing
    h, d_min = kinds.h, kinds.d_min
    v_l = eff_lead_velocity(lead)
    if follower.kind == VehicleKind.HV:
        if follower.state == ProtocolState.PROCESSING:
            return float(dist.ds_req(follower.v_prev, kinds.hv.a_min, h, d_min))
        return float(dist.d0s_req(follower.v_prev, v_l, kinds.hv.a_min, h, d_min))
    if lead_processing is None:
        lead_processing = effectively_processing(lead) and \
            follower.beta in {lead.beta, lead.alpha}
    if lead_processing or lead.kind == VehicleKind.HV:
        req = float(dist.ds_req(follower.v_prev, kinds.hv.a_min, h, d_min))
        if follower.d1s_established:
            req = max(req, float(dist.d1s_req(follower.v_prev, v_l,
                                              kinds.hv.a_min, kinds.iv.a_min, h, d_min)))
        return req
    if follower.d1s_established:
        return float(dist.d1s_req(follower.v_prev, v_l,
                                  kinds.hv.a_min, kinds.iv.a_min, h, d_min))
    return float(dist.d0s_req(follower.v_prev, v_l, kinds.iv.a_min, h, d_min))


def operational_pair_requirement(follower: Vehicle, lead: Vehicle,
                                 kinds: KindLimits,
                                 lead_processing: Optional[bool] = None) -> float:
    """The gap the follower's planner actually needs from this pair.

    Exceeds the published bound by the anticipatory matched-rate term: a
    pair admitted exactly at the published stopping-distance bound could
    not shed a speed surplus within it, and a processing lead is planned
    against as a frozen obstacle.  Transitions are gated at this form so
    fresh pairs start feasible.
    """
    from .sets import effectively_processing
    h, d_min = kinds.h, kinds.d_min
    printed = monitor_pair_requirement(follower, lead, kinds, lead_processing)
    if lead_processing is None:
        lead_processing = effectively_processing(lead) and \
            follower.beta in {lead.beta, lead.alpha}
    if follower.kind == VehicleKind.HV or lead_processing or lead.kind == VehicleKind.HV:
        a_ctx = kinds.hv.a_min
    else:
        a_ctx = kinds.iv.a_min
    credit = 0.0 if lead_processing else eff_lead_velocity(lead)
    hold = float(dist.d0s_req(follower.v_prev, credit, a_ctx, h, d_min))
    return max(printed, hold)


# ---------------------------------------------------------------------------
# HV lane-change gate (published form)
# ---------------------------------------------------------------------------

def _nearest_by_lane(world: WorldState, ego: Vehicle, lane: int, ahead: bool):
    best, best_gap = None, None
    for c in world.vehicles:
        if c.id == ego.id or c.beta != lane:
            continue
        gap = world.gap(ego, c) if ahead else world.gap(c, ego)
        if gap <= 0.0:
            continue
        if best is None or gap < best_gap:
            best, best_gap = c, gap
    return best


def hv_lane_change_gate(hv: Vehicle, world: WorldState, kinds: KindLimits) -> GateReport:
    """Published two-condition check against the target-lane neighbours.

    Identification is by current lane index only; the rule does not
    differentiate vehicle kinds or states.
    """
    h, d_min = kinds.h, kinds.d_min
    a_h = kinds.hv.a_min
    cj1 = _nearest_by_lane(world, hv, hv.alpha, ahead=True)
    ci = _nearest_by_lane(world, hv, hv.alpha, ahead=False)
    conds = {}
    if cj1 is None:
        conds["i"] = (True, math.inf)
    else:
        req = float(dist.ds_req(hv.v_prev, a_h, h, d_min))
        m = world.gap(hv, cj1) - req
        conds["i"] = (m > 0.0, m)
    if ci is None:
        conds["ii"] = (True, math.inf)
    else:
        req = float(dist.ds_req(ci.v_prev, a_h, h, d_min))
        m = world.gap(ci, hv) - req
        conds["ii"] = (m > 0.0, m)
    return GateReport(all(ok for ok, _ in conds.values()), conds)


# ---------------------------------------------------------------------------
# IV lane-change gate
# ---------------------------------------------------------------------------

def binding_lead(ego: Vehicle, candidates, world: WorldState, a_min: float,
                 kinds: KindLimits):
    """The constraint-binding free vehicle ahead.

    Ranking by x + ds(v) orders candidates exactly as the pair bound does:
    satisfying it against the minimiser satisfies it against all.
    """
    best, best_score = None, None
    for c in candidates:
        score = c.pose.x - ego.pose.x + float(dist.ds(eff_lead_velocity(c), a_min, kinds.h))
        if best is None or score < best_score or (score == best_score and c.id < best.id):
            best, best_score = c, score
    return best


def iv_lane_change_gate(iv: Vehicle, sets: SafetySets, world: WorldState,
                        kinds: KindLimits, T: Optional[float],
                        extra_entry_check: bool = True) -> GateReport:
    """The four published conditions, plus an entry-clearance supplement.

    T is the lane-change duration bound used by condition (iv); pass the
    Lemma-2 value when applicable, otherwise a certified empirical bound.
    A None T with HVs behind fails condition (iv).
    """
    h, d_min, v_max = kinds.h, kinds.d_min, kinds.v_max
    a_e = kinds.hv.a_min if iv.d1s_established else kinds.iv.a_min
    conds = {}

    # (i) gap to the binding free vehicle ahead
    i1 = [world.by_id(i) for i in sets.c_plus_i1]
    cj = binding_lead(iv, i1, world, a_e, kinds) if i1 else None
    if cj is None:
        conds["i"] = (True, math.inf)
    else:
        v_cj = eff_lead_velocity(cj)
        req = float(dist.d0s_req(iv.v_prev, v_cj, a_e, h, d_min))
        if iv.d1s_established:
            req = max(req, float(dist.d1s_op_req(
                iv.v_prev, v_cj, kinds.hv.a_min, kinds.iv.a_min, h, d_min)))
        m = world.gap(iv, cj) - req
        conds["i"] = (m >= 0.0, m)

    # (ii) gap to the nearest waiting/processing vehicle or HV ahead
    cl_ids = sets.c_star_i2 | sets.c_plus_h
    if not cl_ids:
        conds["ii"] = (True, math.inf)
    else:
        cl = min((world.by_id(i) for i in cl_ids), key=lambda c: (c.pose.x, c.id))
        req = float(dist.ds_req(iv.v_prev, a_e, h, d_min))
        gap = world.gap(iv, cl)
        conds["ii"] = (gap - req >= 0.0, gap - req)
        if extra_entry_check:
            # frozen-obstacle hold: what the lane-change planner will need
            hold = float(dist.d0s_req(iv.v_prev, 0.0, a_e, h, d_min))
            conds["ii_hold"] = (gap - hold >= 0.0, gap - hold)

    # (iii) every IV behind must be its own stopping distance back.  The
    # family matches what those followers will be held to once the ego is
    # processing, which is the a_h-based stopping gap.
    m3 = math.inf
    for k in sets.c_minus_i:
        c = world.by_id(k)
        req = float(dist.ds_req(c.v_prev, kinds.hv.a_min, h, d_min))
        m3 = min(m3, world.gap(c, iv) - req)
    conds["iii"] = (m3 >= 0.0, m3)

    # (iv) every HV behind must be outside the worst-case closing window
    if not sets.c_minus_h:
        conds["iv"] = (True, math.inf)
    elif T is None:
        conds["iv"] = (False, -math.inf)
    else:
        req = v_max * T + float(dist.ds_req(v_max, kinds.hv.a_min, h, d_min))
        m4 = min(world.gap(world.by_id(k), iv) - req for k in sets.c_minus_h)
        conds["iv"] = (m4 >= 0.0, m4)

    # (v) entry clearance: the transition must not create a pair already
    # under its monitored bound (the published conditions allow that at
    # low speeds, where stopping distances dip below the d_min-backed gap).
    if extra_entry_check:
        m5 = math.inf
        own = {iv.beta, iv.alpha}
        for c in world.vehicles:
            if c.id == iv.id or c.pose.x > iv.pose.x:
                continue
            if not (effective_membership(c) & own):
                continue
            req = operational_pair_requirement(c, iv, kinds, lead_processing=True)
            m5 = min(m5, world.gap(c, iv) - req - GATE_SLACK)
        conds["entry"] = (m5 >= 0.0, m5)

    return GateReport(all(ok for ok, _ in conds.values()), conds, T_used=T)


# ---------------------------------------------------------------------------
# Lane-change duration bound
# ---------------------------------------------------------------------------

def tmin_bound(v: float, limits: LimitSet, W_l: float) -> Optional[float]:
    """Closed-form duration bound, when its preconditions hold.

    Requires the stopping distance to exceed 3*W_l/sqrt(2) and the printed
    trigonometric inequality (evaluated verbatim; the cosine argument is a
    distance over a time, so this is a quasi-random stripe pattern in v).
    Returns v/|a_min|, or None outside the applicability region.
    """
    if v <= 0.0:
        return None
    d = float(dist.ds(v, limits.a_min, limits.h))
    if d <= 3.0 * W_l / math.sqrt(2.0):
        return None
    c = max(-1.0, min(1.0, math.cos(d / limits.h)))
    if d * d * (1.0 - c) <= 3.0 * W_l * W_l:
        return None
    return v / abs(limits.a_min)


_T_CACHE: dict = {}


def simulate_lone_lane_change(v: float, limits: LimitSet, W_l: float,
                              omega_cap: float, N: int = 20,
                              max_slots: int = 40000) -> Optional[int]:
    """Slots a solitary vehicle needs to complete one lane change.

    Drives the actual lane-change planner against an empty road from the
    lane centerline at heading zero.  Returns None if the band test is
    never met within the guard.
    """
    from .types import LaneGeometry
    geo = LaneGeometry(0, 1, W_l)
    corridor = (-W_l / 2.0 - 1e-6, 1.5 * W_l + 1e-6)
    veh = Vehicle(id=0, kind=VehicleKind.IV, pose=Pose(0.0, 0.0, 0.0), v_prev=v,
                  beta=0, alpha=1, state=ProtocolState.PROCESSING, limits=limits)
    for slot in range(1, max_slots + 1):
        prob = mpc.MpcProblem(
            N=N, x=veh.pose.x, v_prev=veh.v_prev, limits=limits,
            objective=mpc.LaneChange(geo.center_y(1)), pose=veh.pose,
            lane_target_y=geo.center_y(1), omega_cap=omega_cap, corridor=corridor)
        plan = mpc.plan_lane_change_problem(prob)
        if not plan.feasible:
            return None
        c = plan.controls[0]
        veh.pose = step_pose(veh.pose, c, limits.h)
        veh.v_prev = c.v
        if completion_reached(veh, geo):
            return slot
    return None


def condition_iv_duration(v: float, limits: LimitSet, W_l: float,
                          omega_cap: float) -> Optional[float]:
    """T for gate condition (iv): Lemma-2 bound when applicable, else a
    simulation-certified bound with a 1.5x safety factor, cached per
    velocity bucket."""
    T = tmin_bound(v, limits, W_l)
    if T is not None:
        return T
    key = (round(v * 2.0) / 2.0, W_l, omega_cap, limits.a_min, limits.theta_max)
    if key not in _T_CACHE:
        slots = simulate_lone_lane_change(max(key[0], 0.5), limits, W_l, omega_cap)
        _T_CACHE[key] = None if slots is None else slots * limits.h * 1.5
    return _T_CACHE[key]


# ---------------------------------------------------------------------------
# HV behavioral model
# ---------------------------------------------------------------------------

@dataclass
class HvParams:
    """Free parameters of the rule-respecting human driver model."""

    v_des: float = 12.0
    gain: float = 1.0            # 1/s, desired-speed tracking
    gap_gain: float = 0.5        # 1/s, proportional gap-keeping
    time_headway: float = 1.0    # s, human spacing preference
    gap_slack: float = 0.5       # m, fixed cushion above the rule bound
    lane_request_rate: float = 0.0   # 1/s Poisson clock for new targets
    lc_duration: float = 3.0     # s, sinusoidal lateral profile length


def hv_desired_gap(v: float, v_lead: float, params: HvParams, kinds: KindLimits) -> float:
    rule = float(dist.d0s_req(v, v_lead, kinds.hv.a_min, kinds.h, kinds.d_min))
    return max(rule + params.gap_slack, params.time_headway * v)


def hv_longitudinal_command(hv: Vehicle, lead: Optional[Vehicle],
                            params: HvParams, kinds: KindLimits,
                            gap: Optional[float] = None) -> float:
    """Velocity for the next slot: desired-speed tracking, human spacing,
    then the hard rule clamp against a worst-case braking lead presumed to
    brake at a_h_min.  Pass gap explicitly on ring roads."""
    lim, h = kinds.hv, kinds.h
    v = hv.v_prev
    v_track = v + params.gain * (params.v_des - v) * h
    v_lo = max(0.0, v + lim.a_min * h)
    v_hi = min(lim.v_max, v + lim.a_max * h)
    if lead is None:
        return min(max(v_track, v_lo), v_hi)
    from .sets import effectively_processing
    if gap is None:
        gap = lead.pose.x - hv.pose.x
    v_l = eff_lead_velocity(lead)
    v_beh = v_l + params.gap_gain * (gap - hv_desired_gap(v, v_l, params, kinds))
    spec = mpc.make_d0s_spec(lim.a_min, h, lim.d_min)
    if effectively_processing(lead):
        v_pred, avail = 0.0, gap  # turning lead: no advance credit
    else:
        v_pred = max(0.0, v_l + lim.a_min * h)
        avail = gap + v_pred * h
    v_safe = float(mpc.max_safe_velocity(avail, spec.sc, spec.ct(v_pred), h, lim.d_min))
    return min(max(min(v_track, v_beh), v_lo), v_hi, max(v_safe, v_lo))


def hv_processing_command(hv: Vehicle, leads, params: HvParams, kinds: KindLimits,
                          elapsed: float, y_start: float, target_y: float,
                          omega_cap: float, gaps: Optional[list] = None) -> Control:
    """Controls during an HV lane change: sinusoidal lateral profile,
    velocity clamped to keep the stopping-distance rule against the
    nearest vehicle ahead in both lanes."""
    lim, h = kinds.hv, kinds.h
    v = hv.v_prev
    v_track = v + params.gain * (params.v_des - v) * h
    v_lo = max(0.0, v + lim.a_min * h)
    v_hi = min(lim.v_max, v + lim.a_max * h)
    v_cmd = min(max(v_track, v_lo), v_hi)
    spec = mpc.make_ds_spec(lim.a_min, h, lim.d_min)
    hold = mpc.make_d0s_spec(lim.a_min, h, lim.d_min)
    from .sets import effectively_processing
    for j, lead in enumerate(leads):
        if lead is None:
            continue
        gap = gaps[j] if gaps is not None else lead.pose.x - hv.pose.x
        if effectively_processing(lead):
            v_pred, avail = 0.0, gap
        else:
            v_pred = max(0.0, eff_lead_velocity(lead) + lim.a_min * h)
            avail = gap + v_pred * h
        v_safe = min(
            float(mpc.max_safe_velocity(avail, spec.sc, spec.ct(v_pred), h, lim.d_min)),
            float(mpc.max_safe_velocity(avail, hold.sc, hold.ct(v_pred), h, lim.d_min)))
        v_cmd = min(v_cmd, max(v_safe, v_lo))
    # Sinusoidal S-curve lateral reference
    T = params.lc_duration
    tau = min(elapsed + h, T)
    span = target_y - y_start
    ydot = span / T * (1.0 - math.cos(2.0 * math.pi * tau / T)) if T > 0 else 0.0
    theta_des = math.atan2(ydot, max(v_cmd, 0.5))
    theta_des = min(max(theta_des, lim.theta_min), lim.theta_max)
    omega = (theta_des - hv.pose.theta) / h
    omega = min(max(omega, -omega_cap), omega_cap)
    return Control(v_cmd, omega)


def hv_gate_with_clearance(hv: Vehicle, world: WorldState, kinds: KindLimits) -> GateReport:
    """Published HV gate plus the clearances the engine's model needs so a
    rule-respecting HV never creates an instantly-breached pair.

    Beyond the published two conditions this also requires the stopping
    gap toward the current-lane lead (the processing state owes that
    vehicle the stopping-distance bound, which at speed exceeds the
    following bound the waiting state was held to) and the entry-clearance
    check over vehicles behind.
    """
    report = hv_lane_change_gate(hv, world, kinds)
    cj2 = _nearest_by_lane(world, hv, hv.beta, ahead=True)
    if cj2 is None:
        report.conditions["j2"] = (True, math.inf)
    else:
        from .sets import effectively_processing
        if effectively_processing(cj2):
            req = float(dist.d0s_req(hv.v_prev, 0.0, kinds.hv.a_min, kinds.h,
                                     kinds.d_min))
        else:
            req = max(float(dist.ds_req(hv.v_prev, kinds.hv.a_min, kinds.h, kinds.d_min)),
                      float(dist.d0s_req(hv.v_prev, eff_lead_velocity(cj2),
                                         kinds.hv.a_min, kinds.h, kinds.d_min)))
        m = world.gap(hv, cj2) - req - GATE_SLACK
        report.conditions["j2"] = (m > 0.0, m)
    m5 = math.inf
    own = {hv.beta, hv.alpha}
    for c in world.vehicles:
        if c.id == hv.id or c.pose.x > hv.pose.x:
            continue
        if not (effective_membership(c) & own):
            continue
        req = operational_pair_requirement(c, hv, kinds, lead_processing=True)
        m5 = min(m5, world.gap(c, hv) - req - GATE_SLACK)
    report.conditions["entry"] = (m5 >= 0.0, m5)
    report.passed = all(ok for ok, _ in report.conditions.values())
    return report
