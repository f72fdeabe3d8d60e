"""Shared domain vocabulary: vehicles, lanes, actuation limits, protocol states.

Everything downstream (planners, protocols, engine) consumes these types.
Velocities are m/s, positions m, headings rad, times s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class VehicleKind(str, Enum):
    HV = "HV"
    IV = "IV"


class ProtocolState(str, Enum):
    FREE = "free"
    WAIT = "wait"
    PROCESSING = "processing"


# Legal state-machine edges (self-loops are always allowed).
LEGAL_TRANSITIONS = {
    (ProtocolState.FREE, ProtocolState.WAIT),
    (ProtocolState.WAIT, ProtocolState.PROCESSING),
    (ProtocolState.PROCESSING, ProtocolState.FREE),
}


def is_legal_transition(before: ProtocolState, after: ProtocolState) -> bool:
    return before == after or (before, after) in LEGAL_TRANSITIONS


@dataclass(frozen=True)
class LimitSet:
    """Actuation envelope for one vehicle kind.

    a_min is the most rapid braking (strictly negative), a_max the strongest
    acceleration, h the slot length during which controls are held constant,
    d_min the minimal standstill gap.
    """

    a_min: float
    a_max: float
    v_max: float
    theta_min: float
    theta_max: float
    h: float
    d_min: float

    def __post_init__(self):
        if not (self.a_min < 0.0 < self.a_max):
            raise ValueError(f"need a_min < 0 < a_max, got {self.a_min}, {self.a_max}")
        if not self.h > 0.0:
            raise ValueError(f"slot length h must be positive, got {self.h}")
        if self.d_min < 0.0:
            raise ValueError(f"d_min must be non-negative, got {self.d_min}")
        if not (self.theta_min <= 0.0 <= self.theta_max):
            raise ValueError("need theta_min <= 0 <= theta_max")
        if self.v_max <= 0.0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float


@dataclass(frozen=True)
class Control:
    """Velocity and yaw-rate commands held constant for one slot."""

    v: float
    omega: float = 0.0


@dataclass
class LaneGeometry:
    """Contiguous integer lane indices mapped affinely to lateral centers."""

    lane_min: int
    lane_max: int
    lane_width: float

    def __post_init__(self):
        if self.lane_max < self.lane_min:
            raise ValueError("lane_max < lane_min")
        if self.lane_width <= 0.0:
            raise ValueError("lane_width must be positive")

    @property
    def lane_count(self) -> int:
        return self.lane_max - self.lane_min + 1

    def center_y(self, lane: int) -> float:
        return lane * self.lane_width

    def contains(self, lane: int) -> bool:
        return self.lane_min <= lane <= self.lane_max


@dataclass
class Vehicle:
    """One traffic participant.

    v_prev is the velocity held during the slot that just ended, beta the
    current lane, alpha the target lane (equal to beta unless a lane change
    is pending or in progress).  The turn signal mirrors the protocol state
    for HVs and is what IVs read one slot late.
    """

    id: int
    kind: VehicleKind
    pose: Pose
    v_prev: float
    beta: int
    alpha: int
    state: ProtocolState = ProtocolState.FREE
    turn_signal: bool = False
    platoon_id: Optional[int] = None
    platoon_pos: Optional[int] = None
    limits: LimitSet = None

    # Behavioral parameters (scenario config; the protocols only bound them).
    v_des: float = 0.0
    objective: object = None  # a mpc.Maneuver, set by the engine each slot

    # Bookkeeping the engine maintains; not part of the protocol contracts.
    braking_until: float = -1.0  # exogenous braking episode end time
    d1s_established: bool = False  # lead-side tightening in force
    lc_session: object = None  # active lane-change bookkeeping (engine-owned)
    established_pairs: object = None  # lead ids whose cross-lane gap is established

    def __post_init__(self):
        if self.limits is None:
            raise ValueError("vehicle needs a LimitSet")
        if not (0.0 <= self.v_prev <= self.limits.v_max):
            raise ValueError(f"v_prev {self.v_prev} outside [0, v_max]")
        if self.established_pairs is None:
            self.established_pairs = set()

    @property
    def x(self) -> float:
        return self.pose.x

    @property
    def y(self) -> float:
        return self.pose.y

    def check_invariants(self):
        if self.state == ProtocolState.FREE and self.alpha != self.beta:
            raise ValueError(f"vehicle {self.id}: free state requires alpha == beta")
        if self.state != ProtocolState.FREE and self.alpha == self.beta:
            raise ValueError(f"vehicle {self.id}: {self.state} requires alpha != beta")


def lane_membership(vehicle: Vehicle, world: "WorldState" = None) -> set:
    """Lanes the vehicle occupies for following purposes.

    A processing vehicle counts in both its current and its target lane
    (followers in either lane treat it as an imaginary vehicle at its x).
    """
    if world is not None and vehicle.id not in world.ids():
        raise KeyError(f"vehicle {vehicle.id} not in world")
    if vehicle.state == ProtocolState.PROCESSING:
        return {vehicle.beta, vehicle.alpha}
    return {vehicle.beta}


@dataclass
class WorldState:
    """All vehicles plus lane geometry on a slot-aligned clock.

    The clock is kept as an integer slot count so recorded event times are
    exact multiples of h.  ring_length, when set, makes x periodic.
    """

    vehicles: list
    geometry: LaneGeometry
    h: float
    slot: int = 0
    ring_length: Optional[float] = None

    @property
    def t(self) -> float:
        return self.slot * self.h

    def ids(self) -> set:
        return {v.id for v in self.vehicles}

    def by_id(self, vid: int) -> Vehicle:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)

    def gap(self, rear: Vehicle, front: Vehicle) -> float:
        """Longitudinal point-to-point gap, forward along the road."""
        d = front.pose.x - rear.pose.x
        if self.ring_length is not None:
            d %= self.ring_length
        return d

    def validate(self):
        seen = set()
        for v in self.vehicles:
            if v.id in seen:
                raise ValueError(f"duplicate vehicle id {v.id}")
            seen.add(v.id)
            if abs(v.limits.h - self.h) > 1e-12:
                raise ValueError(f"vehicle {v.id} slot length differs from world h")
            if not self.geometry.contains(v.beta) or not self.geometry.contains(v.alpha):
                raise ValueError(f"vehicle {v.id} outside lane range")
            v.check_invariants()


def turn_signal_visible(vehicle: Vehicle) -> bool:
    """Signal state IVs act on.

    Decisions in a slot read the previous slot's snapshot, so a signal set
    this slot becomes visible next slot; callers must pass snapshot data.
    """
    return vehicle.turn_signal


def completion_reached(vehicle: Vehicle, geometry: LaneGeometry,
                       band_fraction: float = 1.0 / 20.0,
                       theta_tol: float = 1e-3) -> bool:
    """Lane-change completion test: tight band around the target centerline."""
    band = geometry.lane_width * band_fraction
    return (abs(vehicle.pose.y - geometry.center_y(vehicle.alpha)) < band
            and abs(vehicle.pose.theta) < theta_tol)
