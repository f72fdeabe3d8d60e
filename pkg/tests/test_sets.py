"""Safety-set predicates against a brute-force truth-table oracle."""
import itertools

import numpy as np
import pytest

from mixedsim.sets import (SafetySets, compute_sets, nearest_follower,
                           nearest_lead, update_c_star)
from mixedsim.types import (LaneGeometry, Pose, ProtocolState, Vehicle,
                            VehicleKind, WorldState)

F, W, P = ProtocolState.FREE, ProtocolState.WAIT, ProtocolState.PROCESSING


def veh(kinds, vid, kind, beta, alpha, state, x, v=5.0, signal=None):
    if signal is None:
        signal = kind == VehicleKind.HV and state != F
    return Vehicle(id=vid, kind=kind, pose=Pose(x, beta * 3.5, 0.0), v_prev=v,
                   beta=beta, alpha=alpha, state=state, turn_signal=signal,
                   limits=kinds.of(kind))


def world_of(kinds, vehicles):
    return WorldState(list(vehicles), LaneGeometry(-1, 1, 3.5), kinds.h)


def oracle_sets(ego, world):
    """Independent literal evaluation of the printed set predicates."""
    own = {ego.beta, ego.alpha}
    i1, i2, hp, im, hm, yld = set(), set(), set(), set(), set(), set()
    for c in world.vehicles:
        if c.id == ego.id:
            continue
        ahead = c.pose.x >= ego.pose.x
        behind = c.pose.x <= ego.pose.x
        treated_processing = (c.state == P) or (
            c.kind == VehicleKind.HV and c.turn_signal)
        if c.kind == VehicleKind.IV:
            if ahead and c.state == F and c.beta in own:
                i1.add(c.id)
            if ahead and c.state in (W, P) and ({c.alpha, c.beta} & own):
                i2.add(c.id)
            if behind and (c.beta in own or (c.alpha in own and c.state == P)):
                im.add(c.id)
        else:
            if ahead:
                hp.add(c.id)
            if behind:
                hm.add(c.id)
        if ahead and treated_processing and ego.beta in {c.beta, c.alpha}:
            yld.add(c.id)
    return i1, i2, hp, im, hm, yld


def test_lone_ego_all_empty(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 1, W, 0.0)
    s = compute_sets(ego, world_of(kinds, [ego]))
    assert s.all_empty()


def test_free_iv_ahead_in_target_lane(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 1, W, 0.0)
    other = veh(kinds, 1, VehicleKind.IV, 1, 1, F, 20.0)
    s = compute_sets(ego, world_of(kinds, [ego, other]))
    assert s.c_plus_i1 == {1}
    assert not (s.c_plus_i2 or s.c_plus_h or s.c_minus_i or s.c_minus_h or s.c_yield)


def test_wait_iv_and_hv_behind(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 1, W, 0.0)
    planner = veh(kinds, 1, VehicleKind.IV, -1, 0, W, 15.0)
    hv = veh(kinds, 2, VehicleKind.HV, 0, 0, F, -10.0)
    s = compute_sets(ego, world_of(kinds, [ego, planner, hv]))
    assert s.c_plus_i2 == {1}
    assert s.c_minus_h == {2}
    assert not s.c_plus_i1


def test_bruteforce_equivalence_small_worlds(kinds):
    rng = np.random.default_rng(12)
    lanes = [-1, 0, 1]
    states = [F, W, P]
    count = 0
    for trial in range(400):
        n = int(rng.integers(2, 6))
        vehicles = []
        for vid in range(n):
            kind = VehicleKind.IV if rng.random() < 0.7 else VehicleKind.HV
            beta = int(rng.choice(lanes))
            state = states[int(rng.integers(0, 3))] if kind == VehicleKind.IV \
                else states[int(rng.integers(0, 3))]
            if state == F:
                alpha = beta
            else:
                options = [l for l in lanes if l != beta]
                alpha = int(rng.choice(options))
            vehicles.append(veh(kinds, vid, kind, beta, alpha, state,
                                x=float(rng.uniform(-50, 50))))
        world = world_of(kinds, vehicles)
        ego = vehicles[0]
        if ego.kind != VehicleKind.IV:
            continue
        s = compute_sets(ego, world)
        i1, i2, hp, im, hm, yld = oracle_sets(ego, world)
        assert s.c_plus_i1 == i1
        assert s.c_plus_i2 == i2
        assert s.c_plus_h == hp
        assert s.c_minus_i == im
        assert s.c_minus_h == hm
        assert s.c_yield == yld
        assert s.c_star_i2 == i2
        count += 1
    assert count > 200


def test_partition_and_side_sanity(kinds):
    rng = np.random.default_rng(3)
    for trial in range(100):
        vehicles = [veh(kinds, 0, VehicleKind.IV, 0, 1, W, 0.0)]
        for vid in range(1, 5):
            kind = VehicleKind.IV if rng.random() < 0.6 else VehicleKind.HV
            beta = int(rng.choice([-1, 0, 1]))
            state = [F, W, P][int(rng.integers(0, 3))]
            alpha = beta if state == F else int(rng.choice([l for l in (-1, 0, 1) if l != beta]))
            vehicles.append(veh(kinds, vid, kind, beta, alpha, state,
                                x=float(rng.uniform(-40, 40))))
        world = world_of(kinds, vehicles)
        s = compute_sets(vehicles[0], world)
        assert not (s.c_plus_i1 & s.c_plus_i2)
        ego_x = vehicles[0].pose.x
        for vid in s.c_plus_i1 | s.c_plus_i2 | s.c_plus_h:
            assert world.by_id(vid).pose.x >= ego_x
        for vid in s.c_minus_i | s.c_minus_h:
            assert world.by_id(vid).pose.x <= ego_x
        assert 0 not in (s.c_plus_i1 | s.c_plus_i2 | s.c_plus_h
                         | s.c_minus_i | s.c_minus_h | s.c_yield)


def test_mutual_membership_symmetry(kinds):
    # If a waiting b sits in ego's forward waiting set, then ego (waiting,
    # behind) must be in b's rear set: the mutual-exclusion mechanism.
    rng = np.random.default_rng(5)
    checked = 0
    for trial in range(300):
        a = veh(kinds, 0, VehicleKind.IV, int(rng.choice([-1, 0, 1])), 0, W,
                float(rng.uniform(-20, 20)))
        if a.alpha == a.beta:
            a.alpha = a.beta - 1 if a.beta > -1 else a.beta + 1
        b = veh(kinds, 1, VehicleKind.IV, int(rng.choice([-1, 0, 1])), 0, W,
                float(rng.uniform(-20, 20)))
        if b.alpha == b.beta:
            b.alpha = b.beta - 1 if b.beta > -1 else b.beta + 1
        world = world_of(kinds, [a, b])
        sa = compute_sets(a, world)
        sb = compute_sets(b, world)
        if 1 in sa.c_plus_i2 and {a.beta, a.alpha} & {b.beta, b.alpha} and \
                b.beta in {a.beta, a.alpha}:
            # b ahead overlapping a's lanes; a behind with matching current lane
            if a.beta in {b.beta, b.alpha}:
                assert 0 in sb.c_minus_i
                checked += 1
    assert checked > 10


def test_nearest_lead_examples(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0, F, 0.0)
    a = veh(kinds, 1, VehicleKind.IV, 0, 0, F, 10.0)
    b = veh(kinds, 2, VehicleKind.IV, 0, 0, F, 20.0)
    c = veh(kinds, 3, VehicleKind.IV, 0, 0, F, 30.0)
    world = world_of(kinds, [ego, a, b, c])
    assert nearest_lead(ego, world).id == 1
    # processing vehicle entering ego's lane counts through its membership
    ego2 = veh(kinds, 0, VehicleKind.IV, 0, 0, F, 0.0)
    merger = veh(kinds, 1, VehicleKind.IV, 1, 0, P, 12.0)
    world2 = world_of(kinds, [ego2, merger])
    assert nearest_lead(ego2, world2).id == 1
    assert nearest_lead(ego2, world_of(kinds, [ego2])) is None


def test_nearest_follower_examples(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 0, F, 0.0)
    a = veh(kinds, 1, VehicleKind.IV, 0, 0, F, -5.0)
    b = veh(kinds, 2, VehicleKind.IV, 0, 0, F, -15.0)
    world = world_of(kinds, [ego, a, b])
    assert nearest_follower(ego, world).id == 1
    assert nearest_follower(ego, world_of(kinds, [ego])) is None
    hv_adjacent = veh(kinds, 3, VehicleKind.HV, 1, 1, F, -5.0)
    world3 = world_of(kinds, [ego, hv_adjacent])
    assert nearest_follower(ego, world3) is None  # other lane, no signal
    s = compute_sets(veh(kinds, 0, VehicleKind.IV, 0, 1, W, 0.0), world3)
    assert s.c_minus_h == {3}  # but the rear HV set is lane-unrestricted


def test_update_c_star_growth_and_freeze(kinds):
    ego = veh(kinds, 0, VehicleKind.IV, 0, 1, P, 0.0)
    a = veh(kinds, 1, VehicleKind.IV, 1, 1, F, 15.0)
    world = world_of(kinds, [ego, a])
    s0 = compute_sets(ego, world)
    assert s0.c_plus_i1 == {1} and not s0.c_star_i2
    # a starts its own change: joins the growing set, frozen i1 unchanged
    a.state, a.alpha = P, 0
    s1 = update_c_star(s0, world, ego)
    assert s1.c_star_i2 == {1}
    assert s1.c_plus_i1 == {1}
    # no new processing vehicles: unchanged
    s2 = update_c_star(s1, world, ego)
    assert s2.c_star_i2 == s1.c_star_i2
    # growth is monotone even after the member completes
    a.state, a.beta = F, 0
    s3 = update_c_star(s2, world, ego)
    assert s3.c_star_i2 == {1}
