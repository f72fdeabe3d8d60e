"""Deterministic per-slot world stepper with the safety-invariant monitor.

Each slot runs a fixed pipeline:

1. snapshot the world
2. HV rule decisions and HV gate checks
3. safety-set computation for waiting IVs
4. IV gate checks (wait -> processing)
5. planner solves for every vehicle
6. apply the first control of every plan
7. completion checks (processing -> free), platoon bookkeeping
8. monitor assertions
9. advance the clock

Phases 2-5 read only the phase-1 snapshot, so decisions see the previous
slot's states regardless of iteration order; a vehicle's own transition
this slot does steer which planner it runs.  Violations are data, never
faults: the engine keeps stepping and reports what the monitor saw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import distances as dist
from . import mpc
from .kinematics import step_pose
from .platoon import PlatoonManager
from .protocols import (GATE_SLACK, FollowContext, HvParams, KindLimits,
                        binding_lead, condition_iv_duration, eff_lead_velocity,
                        hv_gate_with_clearance, hv_longitudinal_command,
                        hv_processing_command, iv_following_requirement,
                        iv_lane_change_gate, monitor_pair_requirement,
                        operational_pair_requirement)
from .sets import (compute_sets, effectively_processing, nearest_lead,
                   update_c_star)
from .types import (Control, LaneGeometry, Pose, ProtocolState, Vehicle,
                    VehicleKind, WorldState, completion_reached,
                    is_legal_transition, lane_membership)

BREACH_TOL = 1e-9

SLOT_PHASES = (
    "snapshot", "hv_decisions", "iv_sets", "iv_gates",
    "planner_solves", "apply_controls", "completions", "monitor", "clock",
)

TRACE_HEADER = ("t", "id", "kind", "x", "y", "theta", "v",
                "state", "beta", "alpha", "platoon")


@dataclass
class Violation:
    t: float
    kind: str          # Collision | SeparationBreach | IllegalTransition | InfeasibleWithoutFallback
    id_a: int
    id_b: Optional[int]
    measured: float
    required: float


@dataclass
class LcSession:
    """Frozen lane-change bookkeeping for one processing IV."""

    started_slot: int
    gate: object
    sets: object               # SafetySets; c_star grows per slot
    a_e: float
    y_start: float
    target_y: float
    cj_id: Optional[int] = None
    cl_id: Optional[int] = None
    cl_x: Optional[float] = None


@dataclass
class HvLcSession:
    started_slot: int
    y_start: float
    target_y: float
    gate: object = None


@dataclass
class EngineParams:
    horizon: int = 20
    planner: str = "greedy"            # greedy | qp
    omega_cap: float = 1.5
    hv: HvParams = field(default_factory=HvParams)
    iv_lane_request_rate: float = 0.0  # 1/s
    gates_enabled: bool = True
    hv_rule_respecting: bool = True
    trace_stride: int = 1
    sensor_x: Optional[float] = None
    completion_band: float = 1.0 / 20.0


@dataclass
class RunResult:
    trace: list
    violations: list
    gate_log: list        # (slot, vid, GateReport, transitioned)
    completions: list     # (slot, vid, initiation_slot)
    crossings: list       # (t, vid)
    min_gap: float
    steady_at: Optional[float] = None

    def summary(self) -> dict:
        return {
            "violations": len(self.violations),
            "lane_changes_completed": len(self.completions),
            "min_gap": self.min_gap,
        }


class Engine:
    def __init__(self, world: WorldState, kinds: KindLimits,
                 params: EngineParams, seed: int = 0,
                 platoons: Optional[PlatoonManager] = None,
                 braking_schedule: Optional[dict] = None):
        world.validate()
        self.world = world
        self.kinds = kinds
        self.params = params
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.platoons = platoons
        self.braking_schedule = braking_schedule or {}
        self.gate_log = []
        self.completions = []
        self.crossings = []
        self.min_gap = math.inf
        self._order = sorted(world.vehicles, key=lambda v: v.id)

    # -- helpers -------------------------------------------------------------

    def _snapshot(self) -> WorldState:
        return WorldState([replace(v) for v in self._order], self.world.geometry,
                          self.world.h, self.world.slot, self.world.ring_length)

    def _braking(self, vid: int) -> bool:
        for s, e in self.braking_schedule.get(vid, ()):
            if s <= self.world.slot < e:
                return True
        return False

    def _adjacent_lanes(self, beta: int):
        g = self.world.geometry
        return [l for l in (beta - 1, beta + 1) if g.contains(l)]

    # -- the slot pipeline ----------------------------------------------------

    def step(self):
        snap = self._snapshot()
        snap_by_id = {v.id: v for v in snap.vehicles}
        lane_draws = self.rng.random((len(self._order), 2))
        controls: dict = {}
        ctx_by_id: dict = {}
        transitions: dict = {}
        infeasible: dict = {}

        platoon_roles, platoon_a_eff = self._platoon_roles(snap)

        # Phases 2-5: decide everything from the snapshot.
        for idx, veh in enumerate(self._order):
            sv = snap_by_id[veh.id]
            if veh.kind == VehicleKind.HV:
                self._decide_hv(veh, sv, snap, lane_draws[idx], controls,
                                ctx_by_id, transitions)
            else:
                self._decide_iv(veh, sv, snap, lane_draws[idx], controls,
                                ctx_by_id, transitions, infeasible,
                                platoon_roles, platoon_a_eff)

        # Phase 6: apply controls, record crossings.
        h = self.world.h
        for veh in self._order:
            c = controls[veh.id]
            x_before = veh.pose.x
            veh.pose = step_pose(veh.pose, c, h)
            veh.v_prev = c.v
            if self.params.sensor_x is not None:
                self._check_crossing(veh, x_before)
            if self.world.ring_length is not None:
                L = self.world.ring_length
                if veh.pose.x >= L:
                    veh.pose = Pose(veh.pose.x - L, veh.pose.y, veh.pose.theta)

        # Phase 7: completions.
        self._completions(transitions)
        if self.platoons is not None:
            self.platoons.step_completions(self.world)

        # Phase 8: monitor.
        violations = self._monitor(snap_by_id, ctx_by_id, controls,
                                   transitions, infeasible)

        # Phase 9: clock.
        self.world.slot += 1
        return controls, violations

    # -- HV decisions ----------------------------------------------------------

    def _decide_hv(self, veh, sv, snap, draws, controls, ctx, transitions):
        p = self.params.hv
        kinds = self.kinds
        if sv.state == ProtocolState.FREE and p.lane_request_rate > 0.0:
            lanes = self._adjacent_lanes(sv.beta)
            if lanes and draws[0] < p.lane_request_rate * self.world.h:
                veh.alpha = lanes[int(draws[1] * len(lanes)) % len(lanes)]
                veh.state = ProtocolState.WAIT
                veh.turn_signal = True
                transitions[veh.id] = (sv.state, veh.state)
        if sv.state == ProtocolState.WAIT or (veh.state == ProtocolState.WAIT
                                              and veh.id in transitions):
            if sv.state == ProtocolState.WAIT:  # gate only on snapshot-visible waits
                report = hv_gate_with_clearance(sv, snap, kinds)
                self.gate_log.append((self.world.slot, veh.id, report, report.passed))
                if report.passed:
                    veh.state = ProtocolState.PROCESSING
                    veh.lc_session = HvLcSession(self.world.slot, veh.pose.y,
                                                 snap.geometry.center_y(veh.alpha),
                                                 report)
                    transitions[veh.id] = (sv.state, veh.state)
        if veh.state == ProtocolState.PROCESSING and veh.lc_session is not None:
            s = veh.lc_session
            leads = [self._nearest_in_lane(sv, snap, sv.beta),
                     self._nearest_in_lane(sv, snap, sv.alpha)]
            elapsed = (self.world.slot - s.started_slot) * self.world.h
            c = hv_processing_command(sv, leads, p, kinds, elapsed,
                                      s.y_start, s.target_y, self.params.omega_cap,
                                      gaps=[snap.gap(sv, l) if l else None for l in leads])
            if not self.params.hv_rule_respecting:
                c = Control(min(sv.v_prev + kinds.hv.a_max * self.world.h,
                                kinds.v_max), c.omega)
            controls[veh.id] = c
            ctx[veh.id] = ("hv_lc", [l.id if l else None for l in leads])
            return
        lead = self._nearest_in_lane(sv, snap, sv.beta)
        if self.params.hv_rule_respecting:
            v_cmd = hv_longitudinal_command(sv, lead, p, kinds,
                                            gap=snap.gap(sv, lead) if lead else None)
        else:
            v_track = sv.v_prev + p.gain * (p.v_des - sv.v_prev) * self.world.h
            v_lo = max(0.0, sv.v_prev + kinds.hv.a_min * self.world.h)
            v_hi = min(kinds.v_max, sv.v_prev + kinds.hv.a_max * self.world.h)
            v_cmd = min(max(v_track, v_lo), v_hi)
        if self._braking(veh.id):
            v_cmd = max(0.0, sv.v_prev + kinds.hv.a_min * self.world.h)
        controls[veh.id] = Control(v_cmd)
        ctx[veh.id] = ("hv_follow", lead.id if lead else None)

    def _nearest_in_lane(self, ego, snap, lane):
        best, best_gap = None, None
        for c in snap.vehicles:
            if c.id == ego.id or c.beta != lane:
                continue
            gap = snap.gap(ego, c)
            if gap <= 0.0:
                continue
            if best is None or gap < best_gap:
                best, best_gap = c, gap
        return best

    # -- IV decisions -----------------------------------------------------------

    def _decide_iv(self, veh, sv, snap, draws, controls, ctx, transitions,
                   infeasible, platoon_roles, platoon_a_eff):
        kinds, h = self.kinds, self.world.h
        lim = kinds.iv
        role = platoon_roles.get(veh.id)

        # Lane-change requests (phase 4 front half).
        if (sv.state == ProtocolState.FREE and role is None
                and self.params.iv_lane_request_rate > 0.0):
            lanes = self._adjacent_lanes(sv.beta)
            if lanes and draws[0] < self.params.iv_lane_request_rate * h:
                veh.alpha = lanes[int(draws[1] * len(lanes)) % len(lanes)]
                veh.state = ProtocolState.WAIT
                transitions[veh.id] = (sv.state, veh.state)

        # Gate check for waits visible in the snapshot.  The duration bound
        # is only needed when HVs sit behind, and certifying it is costly.
        if sv.state == ProtocolState.WAIT:
            sets = compute_sets(sv, snap)
            T = None
            if sets.c_minus_h:
                T = condition_iv_duration(sv.v_prev, lim, snap.geometry.lane_width,
                                          self.params.omega_cap)
            report = iv_lane_change_gate(sv, sets, snap, kinds, T)
            passed = report.passed or not self.params.gates_enabled
            self.gate_log.append((self.world.slot, veh.id, report, passed))
            if passed:
                a_e = kinds.hv.a_min if sv.d1s_established else lim.a_min
                veh.state = ProtocolState.PROCESSING
                veh.lc_session = LcSession(
                    self.world.slot, report, sets, a_e, veh.pose.y,
                    snap.geometry.center_y(veh.alpha))
                transitions[veh.id] = (sv.state, veh.state)

        if veh.state == ProtocolState.PROCESSING:
            self._plan_lane_change(veh, sv, snap, controls, ctx, infeasible)
            return

        # Longitudinal following (free and wait states).
        if role is not None and role[0] == "follower":
            _, p, pred_id = role
            lead = next(c for c in snap.vehicles if c.id == pred_id)
            a_eff = platoon_a_eff[p.id]
            spec = mpc.make_d0s_spec(a_eff, h, kinds.d_min)
            from .protocols import PairConstraint
            fctx = FollowContext(lead, (PairConstraint(lead, (spec,), (spec,)),),
                                 "platoon_member",
                                 restricted=(a_eff == kinds.hv.a_min),
                                 hv_behind=(a_eff == kinds.hv.a_min))
            objective = self._platoon_objective(veh, p)
        else:
            hv_override = None
            if role is not None and role[0] == "head":
                hv_override = platoon_a_eff[role[1].id] == kinds.hv.a_min
            fctx = iv_following_requirement(sv, snap, kinds,
                                            hv_behind_override=hv_override)
            veh.d1s_established = sv.d1s_established
            objective = veh.objective
        ctx[veh.id] = ("follow", fctx)

        v = sv.v_prev
        v_lo_hard = max(0.0, v + (kinds.hv.a_min if fctx.restricted else lim.a_min) * h)
        v_hi = min(lim.v_max, v + lim.a_max * h)
        v_soft_floor = max(0.0, v + kinds.hv.a_min * h) if fctx.hv_behind else v_lo_hard

        if self._braking(veh.id):
            v_target = v_soft_floor
        else:
            v_target = self._objective_velocity(sv, fctx, objective, snap)
            if fctx.open_gap_to is not None and fctx.open_lead is not None:
                # Gap-opening override: ease off proportionally until the
                # pending requirement is established, never chase the lead.
                gap = snap.gap(sv, fctx.open_lead)
                v_target = min(v_target, eff_lead_velocity(fctx.open_lead)
                               + 0.5 * (gap - fctx.open_gap_to))
            v_target = max(v_target, v_soft_floor)

        cap = v_hi
        for pair in fctx.pairs:
            gap = snap.gap(sv, pair.lead)
            if pair.frozen:
                v_pred, avail = 0.0, gap  # turning lead: no advance credit
            else:
                a_lead = self._lead_brake_rate(pair.lead)
                v_pred = max(0.0, eff_lead_velocity(pair.lead) + a_lead * h)
                avail = gap + v_pred * h
            for spec in pair.planner_specs:
                cap = min(cap, float(mpc.max_safe_velocity(
                    avail, spec.sc, spec.ct(v_pred), h, spec.d_min)))
        if cap < v_lo_hard - 1e-12:
            infeasible[veh.id] = True
        v0 = max(min(v_target, cap), v_lo_hard)
        controls[veh.id] = Control(v0)

    def _lead_brake_rate(self, lead) -> float:
        # Always the lead's kind capability: predicting harder braking than
        # the lead can deliver is conservative, the reverse is not, and a
        # braking-softened lead can have its restriction lifted mid-slot.
        return self.kinds.hv.a_min if lead.kind == VehicleKind.HV else self.kinds.iv.a_min

    def _objective_velocity(self, sv, fctx, objective, snap) -> float:
        """First-slot velocity the maneuver objective asks for (the greedy
        planner's k=0 target; later slots are re-planned anyway)."""
        h = self.world.h
        if isinstance(objective, mpc.Follow):
            return (objective.x_f[1] - sv.pose.x) / h if len(objective.x_f) > 1 \
                else sv.v_des
        if isinstance(objective, (mpc.Join, mpc.Maintain)) and fctx.lead is not None:
            gap = snap.gap(sv, fctx.lead)
            return (gap - objective.d) / h + eff_lead_velocity(fctx.lead)
        if isinstance(objective, mpc.Split) and fctx.lead is not None:
            gap = snap.gap(sv, fctx.lead)
            return (gap - objective.d_f[1]) / h + eff_lead_velocity(fctx.lead)
        return sv.v_des

    def _platoon_objective(self, veh, p):
        if p.state == "Splitting" and self.platoons is not None:
            for sp in self.platoons.splits:
                if sp.platoon_id == p.id and p.members[sp.index] == veh.id:
                    elapsed = self.world.slot - sp.start_slot
                    tgt = self.platoons.split_gap_target(sp, elapsed + 1)
                    return mpc.Split((tgt, tgt + sp.ramp_per_slot))
        return mpc.Maintain(p.d) if p.state != "Forming" else mpc.Join(p.d)

    # -- lane-change planning -----------------------------------------------------

    def _plan_lane_change(self, veh, sv, snap, controls, ctx, infeasible):
        kinds, h = self.kinds, self.world.h
        lim = kinds.iv
        s = veh.lc_session
        s.sets = update_c_star(s.sets, snap, sv)

        # Binding free vehicle ahead, from the frozen set, live data.  A
        # member that has started its own change is covered by the growing
        # processing set's frozen-obstacle constraint instead (turning
        # vehicles advance less in x than their speed, so the braking-lead
        # credit would overstate them).
        i1 = [c for c in snap.vehicles if c.id in s.sets.c_plus_i1
              and not effectively_processing(c)]
        cj = binding_lead(sv, i1, snap, s.a_e, kinds) if i1 else None
        lead = sep = None
        if cj is not None:
            sep = mpc.make_d0s_spec(s.a_e, h, kinds.d_min)
            lead = mpc.LeadSpec(cj.pose.x, eff_lead_velocity(cj),
                                self._lead_brake_rate(cj))
        cl_ids = s.sets.c_star_i2 | s.sets.c_plus_h
        cl = None
        if cl_ids:
            cands = [c for c in snap.vehicles if c.id in cl_ids and c.pose.x >= sv.pose.x]
            if cands:
                cl = min(cands, key=lambda c: (c.pose.x, c.id))
        s.cj_id = cj.id if cj is not None else None
        s.cl_id = cl.id if cl is not None else None
        s.cl_x = cl.pose.x if cl is not None else None

        g = snap.geometry
        lanes_y = [g.center_y(sv.beta), g.center_y(sv.alpha)]
        corridor = (min(lanes_y) - g.lane_width / 2.0,
                    max(lanes_y) + g.lane_width / 2.0)
        prob = mpc.MpcProblem(
            N=self.params.horizon, x=sv.pose.x, v_prev=sv.v_prev, limits=lim,
            objective=mpc.LaneChange(s.target_y), lead=lead, separation=sep,
            frozen_x=s.cl_x,
            frozen_sep=mpc.make_d0s_spec(s.a_e, h, kinds.d_min) if cl is not None else None,
            a_eff=s.a_e, pose=sv.pose, lane_target_y=s.target_y,
            omega_cap=self.params.omega_cap, corridor=corridor)
        plan = mpc.plan_lane_change(prob, s.sets, snap)
        if plan.feasible:
            controls[veh.id] = plan.controls[0]
        else:
            infeasible[veh.id] = True
            v_fb = max(0.0, sv.v_prev + s.a_e * h)
            omega = min(max(-sv.pose.theta / h, -self.params.omega_cap),
                        self.params.omega_cap)
            controls[veh.id] = Control(v_fb, omega)
        ctx[veh.id] = ("lc_iv", s)

    # -- completions ------------------------------------------------------------

    def _completions(self, transitions):
        g = self.world.geometry
        for veh in self._order:
            if veh.state != ProtocolState.PROCESSING:
                continue
            if not completion_reached(veh, g, self.params.completion_band):
                continue
            if not self._completion_clearance(veh):
                continue
            before = veh.state
            started = veh.lc_session.started_slot if veh.lc_session else None
            veh.state = ProtocolState.FREE
            veh.beta = veh.alpha
            veh.turn_signal = False
            veh.d1s_established = False
            veh.lc_session = None
            transitions[veh.id] = (before, veh.state)
            self.completions.append((self.world.slot, veh.id, started))

    def _completion_clearance(self, veh) -> bool:
        """Hold processing until the post-completion pair bounds are met;
        the published rules allow completing into a gap that the follow-on
        requirement would immediately flag at low speeds."""
        probe = replace(veh, beta=veh.alpha, state=ProtocolState.FREE,
                        turn_signal=False)
        lead = nearest_lead(probe, self.world)
        if lead is None:
            return True
        req = operational_pair_requirement(probe, lead, self.kinds)
        return self.world.gap(probe, lead) >= req + GATE_SLACK

    # -- monitor ------------------------------------------------------------------

    def _monitor(self, snap_by_id, ctx_by_id, controls, transitions, infeasible):
        w, kinds, h = self.world, self.kinds, self.world.h
        t = (w.slot + 1) * h
        out = []

        for vid, (before, after) in transitions.items():
            if not is_legal_transition(before, after):
                out.append(Violation(t, "IllegalTransition", vid, None, 0.0, 0.0))

        # Control box, against the kind limits, independent of the planner.
        for veh in self._order:
            c = controls[veh.id]
            sv = snap_by_id[veh.id]
            lim = veh.limits
            lo = max(0.0, sv.v_prev + lim.a_min * h)
            hi = min(lim.v_max, sv.v_prev + lim.a_max * h)
            if c.v < lo - BREACH_TOL or c.v > hi + BREACH_TOL:
                out.append(Violation(t, "SeparationBreach", veh.id, None, c.v, lo))

        # Pair separations per decision context.
        for veh in self._order:
            kind_ctx = ctx_by_id.get(veh.id)
            if kind_ctx is None:
                continue
            tag, data = kind_ctx
            if tag == "follow":
                fctx = data
                for pair in fctx.pairs:
                    lead = w.by_id(pair.lead.id)
                    gap = w.gap(veh, lead)
                    physical = bool(lane_membership(veh) & lane_membership(lead))
                    if gap <= 0.0:
                        # A cross-lane lead being overtaken is not a collision;
                        # order swaps in a shared lane are caught separately.
                        if physical:
                            out.append(Violation(t, "Collision", veh.id, lead.id,
                                                 gap, 0.0))
                        continue
                    v_l = eff_lead_velocity(lead)
                    req = 0.0
                    for spec in pair.monitor_specs:
                        req = max(req, float(spec.required(veh.v_prev, v_l)))
                    if req > 0.0:
                        self.min_gap = min(self.min_gap, gap)
                    if gap < req - BREACH_TOL:
                        out.append(Violation(t, "SeparationBreach", veh.id, lead.id,
                                             gap, req))
            elif tag == "hv_follow":
                if data is None:
                    continue
                lead = w.by_id(data)
                gap = w.gap(veh, lead)
                self.min_gap = min(self.min_gap, gap)
                req = float(dist.d0s_req(veh.v_prev, eff_lead_velocity(lead),
                                         kinds.hv.a_min, h, kinds.d_min))
                if gap <= 0.0:
                    out.append(Violation(t, "Collision", veh.id, lead.id, gap, 0.0))
                elif gap < req - BREACH_TOL:
                    out.append(Violation(t, "SeparationBreach", veh.id, lead.id, gap, req))
            elif tag == "hv_lc":
                req = float(dist.ds_req(veh.v_prev, kinds.hv.a_min, h, kinds.d_min))
                for lid in data:
                    if lid is None:
                        continue
                    lead = w.by_id(lid)
                    gap = w.gap(veh, lead)
                    self.min_gap = min(self.min_gap, gap)
                    if gap <= 0.0:
                        out.append(Violation(t, "Collision", veh.id, lid, gap, 0.0))
                    elif gap < req - BREACH_TOL:
                        out.append(Violation(t, "SeparationBreach", veh.id, lid, gap, req))
            elif tag == "lc_iv":
                s = data
                if s.cj_id is not None:
                    cj = w.by_id(s.cj_id)
                    gap = w.gap(veh, cj)
                    self.min_gap = min(self.min_gap, gap)
                    req = float(dist.d0s_req(veh.v_prev, eff_lead_velocity(cj),
                                             s.a_e, h, kinds.d_min))
                    if gap <= 0.0:
                        out.append(Violation(t, "Collision", veh.id, s.cj_id, gap, 0.0))
                    elif gap < req - BREACH_TOL:
                        out.append(Violation(t, "SeparationBreach", veh.id, s.cj_id, gap, req))
                if s.cl_x is not None:
                    measured = s.cl_x - veh.pose.x
                    req = float(dist.ds_req(veh.v_prev, s.a_e, h, kinds.d_min))
                    if measured < req - BREACH_TOL:
                        out.append(Violation(t, "SeparationBreach", veh.id, s.cl_id,
                                             measured, req))

        # Fallback integrity: a planner that failed must at least have a
        # constraint-satisfying braking continuation.
        for vid in infeasible:
            veh = w.by_id(vid)
            tag, data = ctx_by_id.get(vid, (None, None))
            if tag == "follow":
                for pair in data.pairs:
                    lead = w.by_id(pair.lead.id)
                    gap = w.gap(veh, lead)
                    req = max((float(s.required(veh.v_prev, eff_lead_velocity(lead)))
                               for s in pair.monitor_specs), default=0.0)
                    if gap < req - BREACH_TOL:
                        out.append(Violation(t, "InfeasibleWithoutFallback", vid,
                                             lead.id, gap, req))

        # Crossing detection: order swaps within a shared lane are collisions
        # even when both gaps read positive at the slot boundaries.
        out.extend(self._order_swap_collisions(snap_by_id, t))
        return out

    def _order_swap_collisions(self, snap_by_id, t):
        out = []
        if self.world.ring_length is not None:
            return out
        lanes: dict = {}
        for veh in self._order:
            for lane in lane_membership(veh):
                lanes.setdefault(lane, []).append(veh)
        for lane, vs in lanes.items():
            vs.sort(key=lambda v: (v.pose.x, v.id))
            for a, b in zip(vs, vs[1:]):
                sa, sb = snap_by_id.get(a.id), snap_by_id.get(b.id)
                if sa is None or sb is None:
                    continue
                shared_before = lane in lane_membership(sa) and lane in lane_membership(sb)
                if shared_before and sa.pose.x > sb.pose.x and a.pose.x <= b.pose.x:
                    out.append(Violation(t, "Collision", a.id, b.id,
                                         b.pose.x - a.pose.x, 0.0))
                gap = b.pose.x - a.pose.x
                if gap <= BREACH_TOL and a.id != b.id:
                    out.append(Violation(t, "Collision", a.id, b.id, gap, 0.0))
        return out

    # -- platoons, crossings, trace -------------------------------------------------

    def _platoon_roles(self, snap):
        roles, a_eff = {}, {}
        if self.platoons is None:
            return roles, a_eff
        stale = {v.id for v in self.world.vehicles if v.platoon_id is not None}
        for p in self.platoons.platoons.values():
            a = self.platoons.a_eff(p, snap)
            a_eff[p.id] = a
            for pos, vid in enumerate(p.members):
                roles[vid] = self.platoons.role(vid)
                veh = self.world.by_id(vid)
                veh.platoon_id = p.id
                veh.platoon_pos = pos
                stale.discard(vid)
        for vid in stale:
            veh = self.world.by_id(vid)
            veh.platoon_id = None
            veh.platoon_pos = None
        # Joining agents already track the relevant end with member spacing:
        # at the tail the agent follows the current tail; at the head the old
        # head follows the agent directly ahead of it.
        for jp in self.platoons.joins:
            p = self.platoons.platoons.get(jp.platoon_id)
            if p is None:
                continue
            if jp.end == "Tail" and jp.agent_id not in roles:
                roles[jp.agent_id] = ("follower", p, p.tail())
            elif jp.end == "Head":
                old_head = next(c for c in snap.vehicles if c.id == jp.agent_id)
                cands = [c for c in snap.vehicles if c.beta == p.lane
                         and c.pose.x > old_head.pose.x]
                if cands:
                    agent = min(cands, key=lambda c: c.pose.x)
                    roles[jp.agent_id] = ("follower", p, agent.id)
        return roles, a_eff

    def _check_crossing(self, veh, x_before):
        s = self.params.sensor_x
        t = (self.world.slot + 1) * self.world.h
        if self.world.ring_length is None:
            if x_before < s <= veh.pose.x:
                self.crossings.append((t, veh.id))
        else:
            L = self.world.ring_length
            a, b = x_before % L, veh.pose.x % L
            crossed = (a < s <= b) if a <= b else (s > a or s <= b)
            if crossed:
                self.crossings.append((t, veh.id))

    def trace_rows(self):
        w = self.world
        rows = []
        for veh in self._order:
            rows.append((w.t, veh.id, veh.kind.value, veh.pose.x, veh.pose.y,
                         veh.pose.theta, veh.v_prev, veh.state.value, veh.beta,
                         veh.alpha, veh.platoon_id if veh.platoon_id is not None else -1))
        return rows

    def run(self, duration: float) -> RunResult:
        n_slots = int(round(duration / self.world.h))
        stride = max(1, self.params.trace_stride)
        trace = list(self.trace_rows())
        violations = []
        for k in range(n_slots):
            _, viol = self.step()
            violations.extend(viol)
            if (k + 1) % stride == 0:
                trace.extend(self.trace_rows())
        return RunResult(trace, violations, self.gate_log, self.completions,
                         self.crossings, self.min_gap)


def monitor(world_before: WorldState, world_after: WorldState,
            kinds: KindLimits) -> list:
    """Standalone pair check between two consecutive world snapshots.

    Collision on any shared-lane crossing or non-positive gap; breach when
    a pair sits below its printed protocol bound.  Transition legality per
    the state machine.  The engine's in-pipeline monitor is richer because
    it knows each vehicle's decision context; this form is for checking
    externally produced traces.
    """
    t = world_after.t
    out = []
    before = {v.id: v for v in world_before.vehicles}
    for v in world_after.vehicles:
        b = before.get(v.id)
        if b is not None and not is_legal_transition(b.state, v.state):
            out.append(Violation(t, "IllegalTransition", v.id, None, 0.0, 0.0))
    lanes: dict = {}
    for v in world_after.vehicles:
        for lane in lane_membership(v):
            lanes.setdefault(lane, []).append(v)
    for lane, vs in lanes.items():
        vs.sort(key=lambda v: (v.pose.x, v.id))
        for rear, front in zip(vs, vs[1:]):
            gap = front.pose.x - rear.pose.x
            if gap <= 0.0:
                out.append(Violation(t, "Collision", rear.id, front.id, gap, 0.0))
                continue
            req = monitor_pair_requirement(rear, front, kinds)
            if gap < req - BREACH_TOL:
                out.append(Violation(t, "SeparationBreach", rear.id, front.id, gap, req))
    return out


def measure_throughput(crossings, sensor_x, window_start: float,
                       window_end: float, steady_at: Optional[float] = None):
    """Vehicles per hour through the sensor during [window_start, window_end)."""
    if steady_at is not None and window_start < steady_at:
        raise WindowBeforeSteadyState(
            f"window starts at {window_start} before steady state at {steady_at}")
    n = sum(1 for t, _ in crossings if window_start <= t < window_end)
    span = window_end - window_start
    return n / span * 3600.0 if span > 0 else 0.0


class WindowBeforeSteadyState(Exception):
    pass
