"""Closed-form minimum-separation functions.

Three families, all point-to-point with d_min absorbing physical length:

* d0s(v, v_lead): relative-velocity-aware gap; collapses to a constant at
  velocity parity, which is what makes tight platoons possible.
* ds(v): velocity-only, credits the lead nothing; the conservative gap used
  against human-driven vehicles and lane-change obstacles.
* d1s(v, v_lead): the tightened gap for an automated vehicle that has a
  human-driven follower and therefore restricts its own braking to a_h_min.

The raw functions are evaluated exactly as published.  The *_req variants
clamp below at d_min before use in constraints (a required separation below
the standstill gap is meaningless, and clamping never weakens a
requirement).  d1s_operational adds the small velocity-linear buffer that
makes the constraint recursively feasible under the constant-braking
fallback; the monitor keeps checking the raw (weaker) form.

All functions accept scalars or numpy arrays elementwise.
"""
from __future__ import annotations

import numpy as np


def _check_rate(a_min, name="a_min"):
    if np.any(np.asarray(a_min) >= 0.0):
        raise ValueError(f"{name} must be strictly negative")


def d0s(v, v_lead, a_min, h, d_min):
    """Minimum gap behind a lead of matched braking capability."""
    _check_rate(a_min)
    return ((v * v - v_lead * v_lead) / (-2.0 * a_min)
            + (v - v_lead) * h
            - 0.5 * a_min * h * h
            + d_min)


def ds(v, a_min, h):
    """Full-stopping-distance gap; no credit for lead motion, no d_min term."""
    _check_rate(a_min)
    return v * v / (-2.0 * a_min) + v * h - 0.5 * a_min * h * h


def d1s(v, v_lead, a_h_min, a_i_min, h, d_min):
    """Gap for a vehicle restricted to braking at a_h_min whose lead may
    brake at a_i_min.  Evaluated verbatim, including the velocity-linear
    cross term with its h-cancellation."""
    if not (a_i_min < a_h_min < 0.0):
        raise ValueError(f"need a_i_min < a_h_min < 0, got {a_i_min}, {a_h_min}")
    return (v * v / (-2.0 * a_h_min)
            - v_lead * v_lead / (-2.0 * a_i_min)
            + (v - v_lead) * h
            - 1.5 * (a_h_min - a_i_min) * h * h * (v_lead / (-a_i_min * h))
            - 0.5 * a_h_min * h * h
            + d_min)


def d1s_operational(v, v_lead, a_h_min, a_i_min, h, d_min):
    """d1s with the cross term's sign flipped.

    The published cross term makes the one-slot feasibility margin of the
    constant-braking fallback negative by 3*(a_h-a_i)*h^2 per slot; with the
    sign flipped the margin is exactly zero, so a state satisfying this form
    keeps the fallback feasible for the whole braking episode.  Planners and
    gates use this form; it exceeds d1s by 3*(a_h-a_i)*h*v_lead/(-a_i).
    """
    if not (a_i_min < a_h_min < 0.0):
        raise ValueError(f"need a_i_min < a_h_min < 0, got {a_i_min}, {a_h_min}")
    return (v * v / (-2.0 * a_h_min)
            - v_lead * v_lead / (-2.0 * a_i_min)
            + (v - v_lead) * h
            + 1.5 * (a_h_min - a_i_min) * h * h * (v_lead / (-a_i_min * h))
            - 0.5 * a_h_min * h * h
            + d_min)


def d0s_req(v, v_lead, a_min, h, d_min):
    """d0s clamped below at d_min, the constraint-ready form."""
    return np.maximum(d_min, d0s(v, v_lead, a_min, h, d_min))


def ds_req(v, a_min, h, d_min):
    """ds clamped below at d_min."""
    return np.maximum(d_min, ds(v, a_min, h))


def d1s_req(v, v_lead, a_h_min, a_i_min, h, d_min):
    """d1s clamped below at d_min (monitor form)."""
    return np.maximum(d_min, d1s(v, v_lead, a_h_min, a_i_min, h, d_min))


def d1s_op_req(v, v_lead, a_h_min, a_i_min, h, d_min):
    """Operational d1s clamped below at d_min (planner/gate form)."""
    return np.maximum(d_min, d1s_operational(v, v_lead, a_h_min, a_i_min, h, d_min))


def ds_dominates_d0s(v_lead, a_min, h, d_min) -> bool:
    """Whether ds(v, a) >= d0s(v, v_lead, a) holds at this lead velocity.

    Algebraically the difference is v_lead^2/(-2a) + v_lead*h - d_min,
    independent of the follower velocity; it can go negative at small
    v_lead with a large d_min.
    """
    return bool(np.all(v_lead * v_lead / (-2.0 * a_min) + v_lead * h - d_min >= 0.0))
