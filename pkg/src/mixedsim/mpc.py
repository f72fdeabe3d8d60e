"""Horizon-N constrained planners.

Longitudinal planning is a box-plus-inequality problem in the velocity
sequence: positions are affine in the decision variables and every maneuver
objective is a convex quadratic.  Safety never depends on optimality, only
on constraint satisfaction, so both solvers below share one exact
feasibility-restoration pass (a forward sweep that clamps each slot
velocity into its reachable-and-safe interval):

* plan_single_lane: projected gradient on the tracking objective, polished
  by the forward sweep each iteration; stops when the objective improves by
  less than 1e-8.
* plan_single_lane_fast: the forward sweep alone, tracking the reference
  one slot ahead (deadbeat with saturation).  Identical constraint
  handling, no iterations; this is the engine's default.

Constraints use the worst-case braking prediction for the lead; objective
references use constant-velocity extrapolation (tracking a doomsday lead
would brake every slot and platoons would grind to a halt).

The lane-change planner is a two-stage shooting method: a small family of
longitudinal profiles filtered for feasibility, then a bang-bang steering
policy rolled out under the full arc kinematics, picking the feasible
rollout with the lowest lateral-tracking cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kinematics import OMEGA_EPS, step_pose
from .types import Control, LimitSet, Pose

FEAS_TOL = 1e-9
_CLAMP_TOL = 1e-12


# ---------------------------------------------------------------------------
# Maneuver objectives (one per row of the maneuver table)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Follow:
    """Track a per-slot target position sequence."""

    x_f: tuple

    def weights(self, N):
        return np.ones(N)


@dataclass(frozen=True)
class Join:
    """Close in on the lead until the gap equals d, sooner discounted better."""

    d: float
    discount: float = 0.1

    def weights(self, N):
        return np.exp(-self.discount * np.arange(N))


@dataclass(frozen=True)
class Maintain:
    """Hold gap d behind the lead.  Same math as Join; orchestration differs."""

    d: float
    discount: float = 0.1

    def weights(self, N):
        return np.exp(-self.discount * np.arange(N))


@dataclass(frozen=True)
class Split:
    """Open the gap along a nondecreasing per-slot spacing schedule."""

    d_f: tuple
    discount: float = 0.1

    def __post_init__(self):
        seq = tuple(self.d_f)
        if any(b < a - 1e-12 for a, b in zip(seq, seq[1:])):
            raise ValueError("split spacing schedule must be nondecreasing")

    def weights(self, N):
        return np.exp(-self.discount * np.arange(N))


@dataclass(frozen=True)
class LaneChange:
    """Drive y to the target-lane centerline W while settling the heading."""

    W: float


# ---------------------------------------------------------------------------
# Separation constraints in quadratic normal form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparationSpec:
    """required(v, v_lead) = max(d_min, sc*v^2 + h*v + ct(v_lead)).

    sc is the ego stopping coefficient 1/(2|a_brake_ego|); ct carries the
    lead-velocity terms.  The normal form gives a closed-form maximum safe
    velocity for any availability, which is what makes exact feasibility
    restoration cheap.
    """

    kind: str
    sc: float
    h: float
    d_min: float
    ct_const: float
    ct_lin: float   # coefficient of v_lead
    ct_quad: float  # coefficient of v_lead^2

    def ct(self, v_lead):
        return self.ct_const + self.ct_lin * v_lead + self.ct_quad * v_lead * v_lead

    def required(self, v, v_lead=0.0):
        return np.maximum(self.d_min, self.sc * v * v + self.h * v + self.ct(v_lead))


def make_d0s_spec(a_min: float, h: float, d_min: float) -> SeparationSpec:
    if a_min >= 0:
        raise ValueError("a_min must be negative")
    inv = 1.0 / (-2.0 * a_min)
    return SeparationSpec(
        kind="d0s", sc=inv, h=h, d_min=d_min,
        ct_const=-0.5 * a_min * h * h + d_min,
        ct_lin=-h, ct_quad=-inv,
    )


def make_ds_spec(a_brake: float, h: float, d_min: float) -> SeparationSpec:
    if a_brake >= 0:
        raise ValueError("a_brake must be negative")
    return SeparationSpec(
        kind="ds", sc=1.0 / (-2.0 * a_brake), h=h, d_min=d_min,
        ct_const=-0.5 * a_brake * h * h,
        ct_lin=0.0, ct_quad=0.0,
    )


def make_d1s_spec(a_h_min: float, a_i_min: float, h: float, d_min: float,
                  operational: bool = True) -> SeparationSpec:
    """Tightened spec for a vehicle restricted to a_h_min braking.

    operational=True flips the sign of the velocity-linear cross term so
    the constant-braking fallback stays feasible slot over slot; the
    published form (operational=False) is what the monitor checks.
    """
    if not (a_i_min < a_h_min < 0.0):
        raise ValueError("need a_i_min < a_h_min < 0")
    cross = 1.5 * (a_h_min - a_i_min) * h / (-a_i_min)
    lin = -h + (cross if operational else -cross)
    return SeparationSpec(
        kind="d1s_op" if operational else "d1s", sc=1.0 / (-2.0 * a_h_min),
        h=h, d_min=d_min,
        ct_const=-0.5 * a_h_min * h * h + d_min,
        ct_lin=lin, ct_quad=-1.0 / (-2.0 * a_i_min),
    )


def max_safe_velocity(avail, sc, ct, h, d_min):
    """Largest v with avail - v*h >= max(d_min, sc*v^2 + h*v + ct).

    avail is the predicted lead (or frozen obstacle) position one slot
    ahead minus the ego's current position.  Array-capable; returns -inf
    where even a standstill violates the quadratic branch.
    """
    disc = 4.0 * h * h + 4.0 * sc * (avail - ct)
    v_quad = np.where(
        disc >= 0.0,
        (-2.0 * h + np.sqrt(np.maximum(disc, 0.0))) / (2.0 * sc),
        -np.inf,
    )
    v_lin = (avail - d_min) / h
    return np.minimum(v_quad, v_lin)


@dataclass(frozen=True)
class LeadSpec:
    """Lead vehicle data for constraint prediction.

    a_brake is the rate the lead is assumed to brake at in the worst case
    (its own capability).
    """

    x: float
    v_prev: float
    a_brake: float


def predict_lead(lead: LeadSpec, h: float, N: int):
    """Worst-case braking rollout: velocities floored at zero.

    Returns (x_pred, v_pred) with x_pred[k] the position at step k
    (x_pred[0] = current) and v_pred[k] the velocity during step k.
    """
    ks = np.arange(1, N + 1)
    v_pred = np.maximum(0.0, lead.v_prev + ks * lead.a_brake * h)
    x_pred = np.empty(N + 1)
    x_pred[0] = lead.x
    np.cumsum(v_pred * h, out=x_pred[1:])
    x_pred[1:] += lead.x
    return x_pred, v_pred


def nominal_lead_positions(lead: LeadSpec, h: float, N: int):
    """Constant-velocity extrapolation used by objective references."""
    return lead.x + lead.v_prev * h * np.arange(N)


# ---------------------------------------------------------------------------
# Problems and plans
# ---------------------------------------------------------------------------

@dataclass
class MpcProblem:
    N: int
    x: float
    v_prev: float
    limits: LimitSet
    objective: object
    lead: Optional[LeadSpec] = None
    separation: Optional[SeparationSpec] = None
    frozen_x: Optional[float] = None
    frozen_sep: Optional[SeparationSpec] = None
    a_eff: Optional[float] = None  # braking restriction; defaults to limits.a_min
    # Lane-change extras
    pose: Optional[Pose] = None
    lane_target_y: Optional[float] = None
    omega_cap: Optional[float] = None
    corridor: Optional[tuple] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least one slot")
        if not (0.0 <= self.v_prev <= self.limits.v_max + 1e-12):
            raise ValueError("v_prev outside [0, v_max]")

    @property
    def brake_rate(self) -> float:
        return self.limits.a_min if self.a_eff is None else self.a_eff


@dataclass
class MpcPlan:
    controls: list
    objective_value: float
    feasible: bool

    @property
    def velocities(self):
        return [c.v for c in self.controls]


def fallback_brake(v_prev: float, limits: LimitSet, N: int,
                   a_min: Optional[float] = None) -> MpcPlan:
    """Constant maximum braking, floored at standstill.

    Always exists and is feasible from any state satisfying its separation
    constraint at entry, which is the safety mechanism everything else
    leans on.  Marked feasible without solving.
    """
    a = limits.a_min if a_min is None else a_min
    vs = [max(0.0, v_prev + (k + 1) * a * limits.h) for k in range(N)]
    return MpcPlan([Control(v) for v in vs], float("nan"), True)


# ---------------------------------------------------------------------------
# Single-lane planning
# ---------------------------------------------------------------------------

def _references(prob: MpcProblem):
    """Objective targets r_k and weights w_k for k = 0..N-1."""
    N, h = prob.N, prob.limits.h
    obj = prob.objective
    if isinstance(obj, Follow):
        r = np.asarray(obj.x_f, dtype=float)[:N]
        if r.size < N:
            raise ValueError("Follow target sequence shorter than horizon")
    elif isinstance(obj, (Join, Maintain)):
        if prob.lead is None:
            raise ValueError(f"{type(obj).__name__} requires a lead")
        r = nominal_lead_positions(prob.lead, h, N) - obj.d
    elif isinstance(obj, Split):
        if prob.lead is None:
            raise ValueError("Split requires a lead")
        d_f = np.asarray(obj.d_f, dtype=float)[:N]
        if d_f.size < N:
            raise ValueError("Split spacing schedule shorter than horizon")
        r = nominal_lead_positions(prob.lead, h, N) - d_f
    else:
        raise TypeError(f"unsupported maneuver for single-lane planning: {obj!r}")
    return r, obj.weights(N)


def _step_interval(prob: MpcProblem, k: int, v_km1: float, x_k: float,
                   lead_x_pred, lead_v_pred):
    """Feasible velocity interval [lo, cap] for slot k given the history."""
    lim, h = prob.limits, prob.limits.h
    lo = max(0.0, v_km1 + prob.brake_rate * h)
    cap = min(lim.v_max, v_km1 + lim.a_max * h)
    if prob.lead is not None:
        sep = prob.separation
        avail = lead_x_pred[k + 1] - x_k
        cap = min(cap, float(max_safe_velocity(
            avail, sep.sc, sep.ct(lead_v_pred[k]), h, sep.d_min)))
    if prob.frozen_x is not None:
        fsep = prob.frozen_sep
        avail = prob.frozen_x - x_k
        cap = min(cap, float(max_safe_velocity(
            avail, fsep.sc, fsep.ct(0.0), h, fsep.d_min)))
    return lo, cap


def forward_clamp(prob: MpcProblem, v_seq):
    """Project a velocity sequence into the feasible set, front to back.

    Clamping down never breaks later feasibility because the braking
    continuation from any constraint-satisfying state remains feasible.
    Returns (clamped sequence, feasible flag).
    """
    h, N = prob.limits.h, prob.N
    lead_x_pred = lead_v_pred = None
    if prob.lead is not None:
        lead_x_pred, lead_v_pred = predict_lead(prob.lead, h, N)
    out = np.empty(N)
    v_km1, x_k = prob.v_prev, prob.x
    for k in range(N):
        lo, cap = _step_interval(prob, k, v_km1, x_k, lead_x_pred, lead_v_pred)
        if cap < lo - _CLAMP_TOL:
            return out, False
        out[k] = min(max(v_seq[k], lo), max(cap, lo))
        x_k += out[k] * h
        v_km1 = out[k]
    return out, True


def _objective_value(prob: MpcProblem, v_seq, r, w) -> float:
    h = prob.limits.h
    x = prob.x + h * np.concatenate(([0.0], np.cumsum(v_seq[:-1])))
    e = x - r
    return float(np.dot(w, e * e))


def plan_single_lane_fast(prob: MpcProblem) -> MpcPlan:
    """Greedy reference tracking with exact feasibility clamps.

    Each slot targets the next reference point as closely as the reachable
    and safe velocity interval allows.  Output always satisfies every
    constraint; optimality is approximate.
    """
    h, N = prob.limits.h, prob.N
    r, w = _references(prob)
    lead_x_pred = lead_v_pred = None
    if prob.lead is not None:
        lead_x_pred, lead_v_pred = predict_lead(prob.lead, h, N)
    v = np.empty(N)
    v_km1, x_k = prob.v_prev, prob.x
    for k in range(N):
        lo, cap = _step_interval(prob, k, v_km1, x_k, lead_x_pred, lead_v_pred)
        if cap < lo - _CLAMP_TOL:
            return MpcPlan([], float("inf"), False)
        if k + 1 < N:
            target = r[k + 1]
        elif N >= 2:
            target = 2.0 * r[N - 1] - r[N - 2]
        else:
            target = r[0]
        v[k] = min(max((target - x_k) / h, lo), max(cap, lo))
        x_k += v[k] * h
        v_km1 = v[k]
    return MpcPlan([Control(float(vk)) for vk in v],
                   _objective_value(prob, v, r, w), True)


def plan_single_lane(prob: MpcProblem, max_iter: int = 200,
                     improve_tol: float = 1e-8) -> MpcPlan:
    """Projected-gradient solve of the single-lane tracking problem.

    Starts from the greedy plan, descends the quadratic objective, and
    restores exact feasibility with the forward sweep after every step.
    Infeasibility (gap already below requirement) is returned, not raised;
    callers fall back to fallback_brake.
    """
    h, N = prob.limits.h, prob.N
    r, w = _references(prob)
    seed = plan_single_lane_fast(prob)
    if not seed.feasible:
        return seed
    v = np.asarray(seed.velocities)
    best_v, best_j = v.copy(), _objective_value(prob, v, r, w)
    # Gradient Lipschitz bound for J(V): 2 h^2 * ||C^T W C|| <= 2 h^2 N sum(w).
    step = 1.0 / (2.0 * h * h * N * float(np.sum(w)) + 1e-30)
    prev_j = best_j
    for _ in range(max_iter):
        x = prob.x + h * np.concatenate(([0.0], np.cumsum(v[:-1])))
        e = w * (x - r)
        # dJ/dv_j = 2h * sum_{k > j} e_k
        grad = 2.0 * h * (np.cumsum(e[::-1])[::-1] - e)
        v, ok = forward_clamp(prob, v - step * grad)
        if not ok:  # cannot happen from a feasible seed; belt and braces
            return MpcPlan([], float("inf"), False)
        j = _objective_value(prob, v, r, w)
        if j < best_j:
            best_j, best_v = j, v.copy()
        if abs(prev_j - j) < improve_tol:
            break
        prev_j = j
    return MpcPlan([Control(float(vk)) for vk in best_v], best_j, True)


def check_single_lane_plan(prob: MpcProblem, plan: MpcPlan, tol: float = FEAS_TOL) -> float:
    """Worst constraint violation of a plan (positive means violated)."""
    h, N = prob.limits.h, prob.N
    lim = prob.limits
    worst = -math.inf
    lead_x_pred = lead_v_pred = None
    if prob.lead is not None:
        lead_x_pred, lead_v_pred = predict_lead(prob.lead, h, N)
    v_km1, x_k = prob.v_prev, prob.x
    for k, c in enumerate(plan.controls):
        vk = c.v
        worst = max(worst, -vk, vk - lim.v_max,
                    max(0.0, v_km1 + prob.brake_rate * h) - vk,
                    vk - min(lim.v_max, v_km1 + lim.a_max * h))
        x_next = x_k + vk * h
        if prob.lead is not None:
            req = prob.separation.required(vk, lead_v_pred[k])
            worst = max(worst, float(req) - (lead_x_pred[k + 1] - x_next))
        if prob.frozen_x is not None:
            req = prob.frozen_sep.required(vk, 0.0)
            worst = max(worst, float(req) - (prob.frozen_x - x_next))
        v_km1, x_k = vk, x_next
    return worst


# ---------------------------------------------------------------------------
# Lane-change planning
# ---------------------------------------------------------------------------

def _longitudinal_candidates(prob: MpcProblem):
    """Velocity profiles to shoot over: brake hard, hold, accelerate."""
    lim, h, N = prob.limits, prob.limits.h, prob.N
    a_lo = prob.brake_rate
    out = []
    for name in ("accel", "hold", "brake"):
        v, seq = prob.v_prev, []
        for _ in range(N):
            if name == "accel":
                v = min(lim.v_max, v + lim.a_max * h)
            elif name == "brake":
                v = max(0.0, v + a_lo * h)
            seq.append(v)
        out.append((name, np.asarray(seq)))
    return out


def _profile_longitudinally_feasible(prob: MpcProblem, v_seq) -> bool:
    """Check separation constraints along a straight-line rollout.

    Straight-line x maximizes longitudinal advance, so passing here is
    sufficient for any steered rollout of the same velocity profile.
    """
    h, N = prob.limits.h, prob.N
    x = prob.x + h * np.cumsum(v_seq)
    if prob.lead is not None:
        lead_x_pred, lead_v_pred = predict_lead(prob.lead, h, N)
        req = prob.separation.required(v_seq, lead_v_pred)
        if np.any(lead_x_pred[1:] - x < req - FEAS_TOL):
            return False
    if prob.frozen_x is not None:
        req = prob.frozen_sep.required(v_seq, 0.0)
        if np.any(prob.frozen_x - x < req - FEAS_TOL):
            return False
    return True


def _steer_policy_rollout(prob: MpcProblem, v_seq, omega0: float):
    """Roll the bang-bang steering closure under full arc kinematics.

    After the forced first move the policy ramps the heading toward the
    target lane, holds, and unwinds so theta lands at zero as y reaches the
    target centerline; the final unwind step is trimmed below the cap so
    the heading settles exactly.
    Returns (J, omegas) or None when bounds are violated.  Scalar math
    throughout; this runs every slot for every vehicle mid-change.
    """
    lim, h, N = prob.limits, prob.limits.h, prob.N
    W = prob.lane_target_y
    cap = prob.omega_cap
    sgn = 1.0 if W >= prob.pose.y else -1.0
    theta_cap = min(lim.theta_max, -lim.theta_min)
    th_hi, th_lo = lim.theta_max + 1e-12, lim.theta_min - 1e-12
    if prob.corridor is not None:
        clo, chi = prob.corridor[0] - 1e-9, prob.corridor[1] + 1e-9
    else:
        clo, chi = -math.inf, math.inf
    x, y, th = prob.pose.x, prob.pose.y, prob.pose.theta
    J = (y - W) ** 2 + th * th
    omegas = []
    for k in range(N):
        v = float(v_seq[k])
        if k == 0:
            w = omega0
        else:
            e = sgn * (W - y)
            tn = sgn * th
            tp = tn if tn > 0.0 else 0.0
            unwind = v * tn * tn / (2.0 * cap) if cap > 0 else 0.0
            if e <= unwind + v * tp * h:
                w = -sgn * min(cap, tp / h)
            elif tn < theta_cap - cap * h:
                w = sgn * cap
            else:
                w = 0.0
        theta_next = th + w * h
        if theta_next > th_hi or theta_next < th_lo:
            return None
        if -OMEGA_EPS < w < OMEGA_EPS:
            x += v * h * math.cos(th)
            y += v * h * math.sin(th)
            th = theta_next
        else:
            half = 0.5 * w * h
            chord = 2.0 * (v / w) * math.sin(half)
            x += chord * math.cos(th + half)
            y += chord * math.sin(th + half)
            th = theta_next
        if y < clo or y > chi:
            return None
        if k + 1 < N:
            J += (y - W) ** 2 + th * th
        omegas.append(w)
    return J, omegas


def plan_lane_change_problem(prob: MpcProblem) -> MpcPlan:
    """Two-stage shooting for the coupled longitudinal/lateral problem."""
    if prob.pose is None or prob.lane_target_y is None or prob.omega_cap is None:
        raise ValueError("lane-change problem needs pose, target y and omega cap")
    sgn = 1.0 if prob.lane_target_y >= prob.pose.y else -1.0
    cap = prob.omega_cap
    best = None
    for name, v_seq in _longitudinal_candidates(prob):
        if not _profile_longitudinally_feasible(prob, v_seq):
            continue
        for omega0 in (sgn * cap, 0.0, -sgn * cap):
            theta0 = prob.pose.theta + omega0 * prob.limits.h
            if theta0 > prob.limits.theta_max + 1e-12 or theta0 < prob.limits.theta_min - 1e-12:
                continue
            rolled = _steer_policy_rollout(prob, v_seq, omega0)
            if rolled is None:
                continue
            J, omegas = rolled
            if best is None or J < best[0]:
                best = (J, v_seq, omegas)
    if best is None:
        return MpcPlan([], float("inf"), False)
    J, v_seq, omegas = best
    controls = [Control(float(v), float(w)) for v, w in zip(v_seq, omegas)]
    return MpcPlan(controls, float(J), True)


def plan_lane_change(prob: MpcProblem, sets=None, world=None) -> MpcPlan:
    """Spec-facing wrapper; set resolution happens in the engine, which
    fills the problem's lead / frozen-obstacle fields from the frozen
    safety sets before calling."""
    return plan_lane_change_problem(prob)
