"""Discrete-time unicycle update and per-slot velocity reachability bounds."""
from __future__ import annotations

import math

from .types import Control, LimitSet, Pose

# Below this yaw rate the arc update is numerically indistinguishable from
# the straight-line branch and sin(w*h/2)/w starts to cancel.
OMEGA_EPS = 1e-12


def step_pose(pose: Pose, control: Control, h: float) -> Pose:
    """Advance a pose by one slot of constant (v, omega).

    Exact arc update when turning, straight-line update otherwise.  Pure
    function; heading advances by omega*h in both branches.
    """
    if h <= 0.0:
        raise ValueError("h must be positive")
    v, w = control.v, control.omega
    if abs(w) < OMEGA_EPS:
        return Pose(
            x=pose.x + v * h * math.cos(pose.theta),
            y=pose.y + v * h * math.sin(pose.theta),
            theta=pose.theta + w * h,
        )
    half = 0.5 * w * h
    chord = 2.0 * (v / w) * math.sin(half)
    return Pose(
        x=pose.x + chord * math.cos(pose.theta + half),
        y=pose.y + chord * math.sin(pose.theta + half),
        theta=pose.theta + w * h,
    )


def velocity_bounds(v_prev: float, limits: LimitSet):
    """Reachable velocity interval for the next slot, clamped to [0, v_max]."""
    v_lo = max(0.0, v_prev + limits.a_min * limits.h)
    v_hi = min(limits.v_max, v_prev + limits.a_max * limits.h)
    return v_lo, v_hi
