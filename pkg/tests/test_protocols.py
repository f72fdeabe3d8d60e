"""Rules, following requirements, gates, and the duration bound."""
import math

import numpy as np
import pytest

from mixedsim import distances as D
from mixedsim.protocols import (HvParams, eff_lead_velocity,
                                hv_lane_change_gate, hv_longitudinal_command,
                                hv_single_lane_separation,
                                iv_following_requirement, iv_lane_change_gate,
                                monitor_pair_requirement, tmin_bound)
from mixedsim.sets import compute_sets
from mixedsim.types import (LaneGeometry, Pose, ProtocolState, Vehicle,
                            VehicleKind, WorldState)

F, W, P = ProtocolState.FREE, ProtocolState.WAIT, ProtocolState.PROCESSING


def veh(kinds, vid, kind, beta, x, v=5.0, alpha=None, state=F, signal=None):
    alpha = beta if alpha is None else alpha
    if signal is None:
        signal = kind == VehicleKind.HV and state != F
    return Vehicle(id=vid, kind=kind, pose=Pose(x, beta * 3.5, 0.0), v_prev=v,
                   beta=beta, alpha=alpha, state=state, turn_signal=signal,
                   limits=kinds.of(kind))


def world_of(kinds, vehicles, lanes=(-1, 1)):
    return WorldState(list(vehicles), LaneGeometry(lanes[0], lanes[1], 3.5), kinds.h)


def test_hv_single_lane_separation_examples(kinds):
    hv = veh(kinds, 0, VehicleKind.HV, 0, 0.0, v=5.0)
    lead = veh(kinds, 1, VehicleKind.IV, 0, 20.0, v=5.0)
    assert hv_single_lane_separation(hv, lead) == pytest.approx(2.0003, abs=1e-12)
    lead.v_prev = 0.0
    assert hv_single_lane_separation(hv, lead) == pytest.approx(
        25 / 12 + 0.05 + 0.0003 + 2, abs=1e-12)
    hv.v_prev = 0.0
    assert hv_single_lane_separation(hv, lead) == pytest.approx(2.0003, abs=1e-12)


def test_iv_following_cases(kinds):
    # behind an IV: matched-rate pair bound at the automated rate
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0)
    iv_lead = veh(kinds, 1, VehicleKind.IV, 0, 15.0)
    ctx = iv_following_requirement(ego, world_of(kinds, [ego, iv_lead]), kinds)
    assert ctx.lead.id == 1 and ctx.label == "iv_lead_d0s"
    req = monitor_pair_requirement(ego, iv_lead, kinds)
    assert req == pytest.approx(float(D.d0s_req(5, 5, kinds.iv.a_min, kinds.h, kinds.d_min)))

    # behind an HV: stopping distance at the human rate
    hv_lead = veh(kinds, 1, VehicleKind.HV, 0, 15.0)
    ego2 = veh(kinds, 0, VehicleKind.IV, 0, 0.0)
    ctx = iv_following_requirement(ego2, world_of(kinds, [ego2, hv_lead]), kinds)
    assert ctx.label.startswith("hv_lead_ds")
    req = monitor_pair_requirement(ego2, hv_lead, kinds)
    assert req == pytest.approx(float(D.ds_req(5, kinds.hv.a_min, kinds.h, kinds.d_min)))

    # cutting-in processing vehicle nearer than the same-lane lead
    ego3 = veh(kinds, 0, VehicleKind.IV, 0, 0.0, v=10.0)
    far_lead = veh(kinds, 1, VehicleKind.IV, 0, 40.0, v=10.0)
    cutter = veh(kinds, 2, VehicleKind.IV, 1, 12.0, v=10.0, alpha=0, state=P)
    ctx = iv_following_requirement(ego3, world_of(kinds, [ego3, far_lead, cutter]), kinds)
    assert ctx.lead.id == 2
    assert ctx.yield_active
    req = monitor_pair_requirement(ego3, cutter, kinds)
    assert req == pytest.approx(float(D.ds_req(10, kinds.hv.a_min, kinds.h, kinds.d_min)))


def test_followed_by_hv_tightening(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0)
    lead = veh(kinds, 1, VehicleKind.IV, 0, 10.0)
    tail = veh(kinds, 2, VehicleKind.HV, 0, -10.0)
    world = world_of(kinds, [ego, lead, tail])
    ctx = iv_following_requirement(ego, world, kinds)
    assert ctx.hv_behind
    assert ego.d1s_established  # ten metres is ample at 5 m/s
    assert ctx.restricted
    req = monitor_pair_requirement(ego, lead, kinds)
    assert req == pytest.approx(float(D.d1s_req(5, 5, kinds.hv.a_min,
                                                kinds.iv.a_min, kinds.h, kinds.d_min)))
    # transition instead when the gap is not yet established
    ego2 = veh(kinds, 3, VehicleKind.IV, 0, 0.0, v=15.0)
    lead2 = veh(kinds, 4, VehicleKind.IV, 0, 5.1, v=15.0)
    tail2 = veh(kinds, 5, VehicleKind.HV, 0, -10.0)
    ctx2 = iv_following_requirement(ego2, world_of(kinds, [ego2, lead2, tail2]), kinds)
    assert ctx2.hv_behind and not ctx2.restricted
    assert ctx2.open_gap_to is not None


def test_hv_gate_examples(kinds):
    # empty target lane: vacuous pass
    hv = veh(kinds, 0, VehicleKind.HV, 0, 0.0, v=5.0, alpha=1, state=W)
    report = hv_lane_change_gate(hv, world_of(kinds, [hv]), kinds)
    assert report.passed
    assert report.conditions["i"][1] == math.inf

    # follower in target lane just inside its stopping distance: fails (ii)
    req = float(D.ds_req(5.0, kinds.hv.a_min, kinds.h, kinds.d_min))
    tail = veh(kinds, 1, VehicleKind.IV, 1, -(req - 0.01), v=5.0)
    report = hv_lane_change_gate(hv, world_of(kinds, [hv, tail]), kinds)
    assert not report.passed and not report.conditions["ii"][0]

    # both neighbours at twice the requirement: passes with positive margins
    lead = veh(kinds, 2, VehicleKind.IV, 1, 2 * req, v=5.0)
    tail2 = veh(kinds, 3, VehicleKind.IV, 1, -(2 * req), v=5.0)
    report = hv_lane_change_gate(hv, world_of(kinds, [hv, lead, tail2]), kinds)
    assert report.passed
    assert report.conditions["i"][1] > 0 and report.conditions["ii"][1] > 0


def test_iv_gate_lone_vehicle_passes(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0, v=10.0, alpha=1, state=W)
    world = world_of(kinds, [ego])
    sets = compute_sets(ego, world)
    report = iv_lane_change_gate(ego, sets, world, kinds, T=None)
    assert report.passed


def test_iv_gate_hv_behind_window(kinds):
    T = 1.0
    req = kinds.v_max * T + float(D.ds_req(kinds.v_max, kinds.hv.a_min,
                                           kinds.h, kinds.d_min))
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0, v=10.0, alpha=1, state=W)
    hv = veh(kinds, 1, VehicleKind.HV, 1, -(req - 1e-3), v=10.0)
    world = world_of(kinds, [ego, hv])
    sets = compute_sets(ego, world)
    report = iv_lane_change_gate(ego, sets, world, kinds, T=T)
    assert not report.passed and not report.conditions["iv"][0]
    # just outside the window: condition (iv) passes
    hv.pose = Pose(-(req + 1e-3), hv.pose.y, 0.0)
    report = iv_lane_change_gate(ego, sets, world, kinds, T=T)
    assert report.conditions["iv"][0]
    assert report.T_used == T


def test_iv_gate_margins_monotone_in_gaps(kinds):
    # enlarging every gap keeps a passing configuration passing
    rng = np.random.default_rng(2)
    for _ in range(50):
        v = rng.uniform(1, 20)
        ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0, v=v, alpha=1, state=W)
        ahead = veh(kinds, 1, VehicleKind.IV, 1, rng.uniform(20, 60), v=v)
        behind = veh(kinds, 2, VehicleKind.IV, 0, -rng.uniform(20, 60), v=v)
        world = world_of(kinds, [ego, ahead, behind])
        sets = compute_sets(ego, world)
        rep = iv_lane_change_gate(ego, sets, world, kinds, T=1.0)
        if not rep.passed:
            continue
        ahead.pose = Pose(ahead.pose.x + 30.0, ahead.pose.y, 0.0)
        behind.pose = Pose(behind.pose.x - 30.0, behind.pose.y, 0.0)
        rep2 = iv_lane_change_gate(ego, compute_sets(ego, world), world, kinds, T=1.0)
        assert rep2.passed


def test_two_contenders_never_both_pass_in_conflict(kinds):
    # Two waiting vehicles targeting the same lane may both pass only when
    # mutually clear: the rear one's forward stopping requirement against
    # the front one must hold, which is exactly what the forward-set
    # condition enforces.  A conflicting simultaneous entry never happens.
    rng = np.random.default_rng(8)
    both, conflicts = 0, 0
    for _ in range(500):
        v = rng.uniform(2, 25)
        xa, xb = rng.uniform(-30, 30, 2)
        a = veh(kinds, 0, VehicleKind.IV, 1, xa, v=v, alpha=0, state=W)
        b = veh(kinds, 1, VehicleKind.IV, -1, xb, v=v, alpha=0, state=W)
        world = world_of(kinds, [a, b])
        sa, sb = compute_sets(a, world), compute_sets(b, world)
        pa = iv_lane_change_gate(a, sa, world, kinds, T=1.0).passed
        pb = iv_lane_change_gate(b, sb, world, kinds, T=1.0).passed
        rear, front = (a, b) if xa <= xb else (b, a)
        req = float(D.ds_req(rear.v_prev, kinds.iv.a_min, kinds.h, kinds.d_min))
        conflicting = abs(xa - xb) < req
        if conflicting:
            conflicts += 1
            assert not (pa and pb), f"conflicting simultaneous entry at gap {abs(xa-xb)}"
        if pa and pb:
            both += 1
    assert conflicts > 20          # the generator does produce tight pairs
    assert both > 0                # and far-apart pairs legitimately coexist


def test_gate_necessity_ordering_logged(kinds):
    # The claim that (i)-(ii) are necessary for (iv) rests on the duration
    # bound existing only when the velocity region is nonempty.  With the
    # bound supplied independently the implication can fail (rear window
    # clear while a lead sits close); such cases are discrepancy findings
    # to be logged, never masked.
    rng = np.random.default_rng(11)
    holds, findings, total = 0, [], 0
    for trial in range(300):
        v = rng.uniform(2, 25)
        ego = veh(kinds, 0, VehicleKind.IV, 0, 0.0, v=v, alpha=1, state=W)
        others = [
            veh(kinds, 1, VehicleKind.HV, 1, rng.uniform(-400, 80), v=rng.uniform(0, 25)),
            veh(kinds, 2, VehicleKind.IV, 1, rng.uniform(-80, 80), v=rng.uniform(0, 25)),
        ]
        world = world_of(kinds, [ego] + others)
        sets = compute_sets(ego, world)
        if not sets.c_minus_h:
            continue
        rep = iv_lane_change_gate(ego, sets, world, kinds, T=1.0)
        total += 1
        if rep.conditions["iv"][0]:
            if rep.conditions["i"][0] and rep.conditions["ii"][0]:
                holds += 1
            else:
                findings.append(trial)
    assert total > 30 and holds > 0
    if findings:
        print(f"\nnecessity-ordering discrepancies (rear window clear, lead "
              f"close) in {len(findings)}/{total} sampled worlds: {findings[:8]}")


def test_tmin_bound_examples(iv_limits):
    assert tmin_bound(10.0, iv_limits, 3.5) is None  # stopping distance too short
    t42 = tmin_bound(42.0, iv_limits, 3.5)
    assert t42 == pytest.approx(42.0 / 8.0)
    assert tmin_bound(0.0, iv_limits, 3.5) is None


def test_tmin_verbatim_trig_condition(iv_limits):
    # The printed trigonometric inequality is evaluated verbatim; its
    # cosine argument is a distance over a time, so applicability forms
    # stripes in velocity.  Both outcomes must occur.
    outcomes = set()
    for v in np.linspace(10.9, 42, 300):
        d = float(D.ds(v, iv_limits.a_min, iv_limits.h))
        if d <= 3 * 3.5 / math.sqrt(2):
            continue
        outcomes.add(tmin_bound(float(v), iv_limits, 3.5) is not None)
    assert outcomes == {True, False}


def test_hv_longitudinal_respects_rule(kinds):
    # The command never lets the next-slot gap drop under the rule bound
    # against the presumed worst-case lead.
    rng = np.random.default_rng(6)
    params = HvParams(v_des=20.0)
    for _ in range(300):
        v = rng.uniform(0, 30)
        vl = rng.uniform(0, 30)
        gap = float(D.d0s_req(v, vl, kinds.hv.a_min, kinds.h, kinds.d_min)) \
            * rng.uniform(1.0, 3.0)
        hv = veh(kinds, 0, VehicleKind.HV, 0, 0.0, v=v)
        lead = veh(kinds, 1, VehicleKind.IV, 0, gap, v=vl)
        cmd = hv_longitudinal_command(hv, lead, params, kinds, gap=gap)
        v_pred = max(0.0, vl + kinds.hv.a_min * kinds.h)
        gap_next = gap + (v_pred - cmd) * kinds.h
        req = float(D.d0s_req(cmd, v_pred, kinds.hv.a_min, kinds.h, kinds.d_min))
        lo = max(0.0, v + kinds.hv.a_min * kinds.h)
        if cmd > lo + 1e-12:  # unless already braking flat out
            assert gap_next >= req - 1e-9
