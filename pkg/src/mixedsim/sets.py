"""Safety-related vehicle sets and lead/follower identification.

All predicates read the previous slot's protocol states (callers pass a
snapshot world).  "Ahead" and "behind" are non-strict in x with the ego
excluded; the nearest-lead and nearest-follower queries are strict.

Turn signals stand in for state broadcasts on human-driven vehicles: an
"on" signal is conservatively treated as processing, so a signalling HV
occupies its target lane for membership purposes and can appear in the
yield set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .types import ProtocolState, Vehicle, VehicleKind, WorldState, lane_membership


def effective_membership(vehicle: Vehicle) -> set:
    """Lane membership as an automated vehicle should assume it.

    HVs with the signal on are treated as already committed to their
    target lane.
    """
    lanes = lane_membership(vehicle)
    if vehicle.kind == VehicleKind.HV and vehicle.turn_signal:
        lanes = lanes | {vehicle.alpha}
    return lanes


def effectively_processing(vehicle: Vehicle) -> bool:
    if vehicle.state == ProtocolState.PROCESSING:
        return True
    return vehicle.kind == VehicleKind.HV and vehicle.turn_signal


def nearest_lead(ego: Vehicle, world: WorldState) -> Optional[Vehicle]:
    """Nearest vehicle strictly ahead occupying the ego's current lane."""
    best, best_gap = None, None
    for c in world.vehicles:
        if c.id == ego.id or ego.beta not in effective_membership(c):
            continue
        gap = world.gap(ego, c)
        if gap <= 0.0:
            continue
        if best is None or gap < best_gap or (gap == best_gap and c.id < best.id):
            best, best_gap = c, gap
    return best


def nearest_follower(ego: Vehicle, world: WorldState) -> Optional[Vehicle]:
    """Nearest vehicle strictly behind occupying the ego's current lane."""
    best, best_gap = None, None
    for c in world.vehicles:
        if c.id == ego.id or ego.beta not in effective_membership(c):
            continue
        gap = world.gap(c, ego)
        if gap <= 0.0:
            continue
        if best is None or gap < best_gap or (gap == best_gap and c.id < best.id):
            best, best_gap = c, gap
    return best


@dataclass
class SafetySets:
    """The six gate-relevant id sets plus the growing processing set."""

    c_plus_i1: frozenset
    c_plus_i2: frozenset
    c_plus_h: frozenset
    c_minus_i: frozenset
    c_minus_h: frozenset
    c_yield: frozenset
    c_star_i2: frozenset

    def all_empty(self) -> bool:
        return not (self.c_plus_i1 or self.c_plus_i2 or self.c_plus_h
                    or self.c_minus_i or self.c_minus_h or self.c_yield)


def compute_sets(ego: Vehicle, world: WorldState) -> SafetySets:
    """Evaluate the printed set predicates for an IV around its lane pair."""
    if ego.kind != VehicleKind.IV:
        raise ValueError("safety sets are defined for IVs")
    own = {ego.beta, ego.alpha}
    i1, i2, hp, im, hm, yld = set(), set(), set(), set(), set(), set()
    for c in world.vehicles:
        if c.id == ego.id:
            continue
        ahead = c.pose.x >= ego.pose.x
        behind = c.pose.x <= ego.pose.x
        if c.kind == VehicleKind.HV:
            if ahead:
                hp.add(c.id)
            if behind:
                hm.add(c.id)
            if ahead and effectively_processing(c) and ego.beta in {c.beta, c.alpha}:
                yld.add(c.id)
            continue
        # IV candidates
        if ahead:
            if c.state == ProtocolState.FREE and c.beta in own:
                i1.add(c.id)
            if c.state in (ProtocolState.WAIT, ProtocolState.PROCESSING) \
                    and ({c.alpha, c.beta} & own):
                i2.add(c.id)
            if c.state == ProtocolState.PROCESSING and ego.beta in {c.beta, c.alpha}:
                yld.add(c.id)
        if behind:
            if c.beta in own or (c.alpha in own and c.state == ProtocolState.PROCESSING):
                im.add(c.id)
    return SafetySets(
        c_plus_i1=frozenset(i1), c_plus_i2=frozenset(i2), c_plus_h=frozenset(hp),
        c_minus_i=frozenset(im), c_minus_h=frozenset(hm), c_yield=frozenset(yld),
        c_star_i2=frozenset(i2),
    )


def update_c_star(sets: SafetySets, world: WorldState, ego: Vehicle) -> SafetySets:
    """Grow the processing set with IVs ahead that have entered processing.

    Membership is monotone for the duration of the ego's lane change; the
    frozen ahead-sets stay as computed at initiation.
    """
    grown = set(sets.c_star_i2)
    for c in world.vehicles:
        if c.id == ego.id or c.kind != VehicleKind.IV:
            continue
        if c.pose.x >= ego.pose.x and c.state == ProtocolState.PROCESSING:
            grown.add(c.id)
    return SafetySets(
        c_plus_i1=sets.c_plus_i1, c_plus_i2=sets.c_plus_i2, c_plus_h=sets.c_plus_h,
        c_minus_i=sets.c_minus_i, c_minus_h=sets.c_minus_h, c_yield=sets.c_yield,
        c_star_i2=frozenset(grown),
    )
