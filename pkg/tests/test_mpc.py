"""Planner tests: feasibility oracles, grid-search optimality, fallback."""
import itertools
import math

import numpy as np
import pytest

from mixedsim import mpc
from mixedsim.types import Control, Pose


def d0s_spec(kinds):
    return mpc.make_d0s_spec(kinds.iv.a_min, kinds.h, kinds.d_min)


def test_fallback_examples(iv_limits):
    assert mpc.fallback_brake(5.0, iv_limits, 3).velocities == \
        pytest.approx([4.92, 4.84, 4.76])
    assert mpc.fallback_brake(0.0, iv_limits, 4).velocities == [0, 0, 0, 0]
    assert mpc.fallback_brake(0.05, iv_limits, 2).velocities == [0.0, 0.0]
    assert mpc.fallback_brake(5.0, iv_limits, 3).feasible


def test_accelerates_when_unconstrained(kinds):
    prob = mpc.MpcProblem(
        N=10, x=0.0, v_prev=5.0, limits=kinds.iv,
        objective=mpc.Follow(tuple(1000.0 + 5 * k for k in range(10))),
        lead=mpc.LeadSpec(100.0, 5.0, kinds.iv.a_min),
        separation=d0s_spec(kinds))
    for planner in (mpc.plan_single_lane_fast, mpc.plan_single_lane):
        plan = planner(prob)
        assert plan.feasible
        expect = [5.0 + 0.04 * (k + 1) for k in range(10)]
        assert plan.velocities == pytest.approx(expect, abs=1e-9)


def grid_search_oracle(prob, grid=0.01):
    """Exhaustive search over velocity sequences at fixed discretization."""
    h = prob.limits.h
    lead_x, lead_v = mpc.predict_lead(prob.lead, h, prob.N)
    sep = prob.separation
    r, w = mpc._references(prob)
    best = (math.inf, None)

    def levels(v_prev):
        lo = max(0.0, v_prev + prob.limits.a_min * h)
        hi = min(prob.limits.v_max, v_prev + prob.limits.a_max * h)
        k0 = math.ceil(lo / grid - 1e-9)
        k1 = math.floor(hi / grid + 1e-9)
        return [k * grid for k in range(k0, k1 + 1)]

    def rec(k, v_prev, x, seq, cost):
        nonlocal best
        if k == prob.N:
            if cost < best[0]:
                best = (cost, list(seq))
            return
        for v in levels(v_prev):
            x_next = x + v * h
            if lead_x[k + 1] - x_next < float(sep.required(v, lead_v[k])) - 1e-12:
                continue
            c = cost + (w[k + 1] * (x_next - r[k + 1]) ** 2 if k + 1 < prob.N else 0.0)
            rec(k + 1, v, x_next, seq + [v], c)

    base_cost = float(w[0] * (prob.x - r[0]) ** 2)
    rec(0, prob.v_prev, prob.x, [], base_cost)
    return best


def test_optimality_vs_grid_oracle(kinds):
    # Reduced horizon, tight discretization; the planner must not lose to
    # the best grid point.
    prob = mpc.MpcProblem(
        N=3, x=0.0, v_prev=5.0, limits=kinds.iv,
        objective=mpc.Follow((1000.0, 1005.0, 1010.0)),
        lead=mpc.LeadSpec(100.0, 5.0, kinds.iv.a_min),
        separation=d0s_spec(kinds))
    oracle_cost, oracle_seq = grid_search_oracle(prob)
    plan = mpc.plan_single_lane(prob)
    assert plan.feasible
    assert plan.objective_value <= oracle_cost + 1e-6


def test_optimality_vs_grid_oracle_constrained(kinds):
    # Close behind a slower lead: constraints bind, planner still at least
    # matches the discretized optimum.
    prob = mpc.MpcProblem(
        N=3, x=0.0, v_prev=6.0, limits=kinds.iv,
        objective=mpc.Maintain(2.2),
        lead=mpc.LeadSpec(4.0, 5.0, kinds.iv.a_min),
        separation=d0s_spec(kinds))
    oracle_cost, _ = grid_search_oracle(prob, grid=0.005)
    plan = mpc.plan_single_lane(prob)
    assert plan.feasible
    assert mpc.check_single_lane_plan(prob, plan) <= 1e-9
    assert plan.objective_value <= oracle_cost + 1e-6


def hold_gap(v, a, h, d_min):
    """Gap at which holding speed v stays feasible against the worst-case
    braking prediction: d_min + v*h + 2*|a|*h^2."""
    return d_min + v * h + 2.0 * abs(a) * h * h


def test_maintain_at_hold_gap_returns_constant_velocity(kinds):
    # At the steady following gap, the first planned control holds speed
    # exactly; deeper slots hedge against the predicted braking lead, which
    # is immaterial because only the first control is ever applied.
    v = 5.0
    g = hold_gap(v, kinds.iv.a_min, kinds.h, kinds.d_min)
    prob = mpc.MpcProblem(
        N=20, x=0.0, v_prev=v, limits=kinds.iv, objective=mpc.Maintain(g),
        lead=mpc.LeadSpec(g, v, kinds.iv.a_min), separation=d0s_spec(kinds))
    for planner in (mpc.plan_single_lane_fast, mpc.plan_single_lane):
        plan = planner(prob)
        assert plan.feasible
        assert plan.controls[0].v == pytest.approx(v, abs=1e-12)
        assert mpc.check_single_lane_plan(prob, plan) <= 1e-9


def test_hold_infeasible_at_parity_gap(kinds):
    # Direct substitution: at the bare parity gap the constant-velocity
    # sequence violates the first-step constraint against the braking
    # prediction by about v*h, so it is not among the feasible plans.
    from mixedsim import distances as D
    v, h = 5.0, kinds.h
    gap = float(D.d0s(v, v, kinds.iv.a_min, h, kinds.d_min))
    v_pred = v + kinds.iv.a_min * h
    lhs = gap + v_pred * h - v * h
    rhs = float(D.d0s(v, v_pred, kinds.iv.a_min, h, kinds.d_min))
    assert lhs < rhs - 0.04  # infeasible by roughly v*h, not a rounding issue
    prob = mpc.MpcProblem(
        N=5, x=0.0, v_prev=v, limits=kinds.iv, objective=mpc.Maintain(gap),
        lead=mpc.LeadSpec(gap, v, kinds.iv.a_min), separation=d0s_spec(kinds))
    plan = mpc.plan_single_lane_fast(prob)
    assert plan.feasible  # feasible overall (braking works) ...
    assert plan.controls[0].v < v  # ... but holding speed is not available


def test_illegal_initialization_infeasible(kinds):
    prob = mpc.MpcProblem(
        N=5, x=0.0, v_prev=5.0, limits=kinds.iv, objective=mpc.Maintain(1.9),
        lead=mpc.LeadSpec(1.9, 5.0, kinds.iv.a_min), separation=d0s_spec(kinds))
    assert not mpc.plan_single_lane_fast(prob).feasible
    assert not mpc.plan_single_lane(prob).feasible


def test_plans_always_satisfy_constraints(kinds):
    rng = np.random.default_rng(4)
    from mixedsim import distances as D
    for _ in range(300):
        v = rng.uniform(0, 33.6)
        vl = rng.uniform(0, 33.6)
        req = float(D.d0s_req(v, vl, kinds.iv.a_min, kinds.h, kinds.d_min))
        gap = req * rng.uniform(1.0, 2.0)
        target = rng.choice([
            mpc.Maintain(max(2.0, gap * rng.uniform(0.5, 1.5))),
            mpc.Join(max(2.0, gap * rng.uniform(0.5, 1.5))),
            mpc.Follow(tuple(v * kinds.h * k for k in range(1, 21))),
        ])
        prob = mpc.MpcProblem(
            N=20, x=0.0, v_prev=v, limits=kinds.iv, objective=target,
            lead=mpc.LeadSpec(gap, vl, kinds.iv.a_min), separation=d0s_spec(kinds))
        plan = mpc.plan_single_lane_fast(prob)
        assert plan.feasible
        assert mpc.check_single_lane_plan(prob, plan) <= 1e-9
        qp = mpc.plan_single_lane(prob)
        assert qp.feasible
        assert mpc.check_single_lane_plan(prob, qp) <= 1e-9
        assert qp.objective_value <= plan.objective_value + 1e-9


def test_recursive_feasibility_along_traces(kinds):
    # Apply the first control, evolve the lead braking no harder than its
    # rate, rebuild: the next problem stays feasible.
    rng = np.random.default_rng(9)
    from mixedsim import distances as D
    h = kinds.h
    for _ in range(100):
        v = rng.uniform(0, 30)
        vl = rng.uniform(0, 30)
        gap = float(D.d0s_req(v, vl, kinds.iv.a_min, h, kinds.d_min)) * rng.uniform(1.0, 1.5)
        x, xl = 0.0, gap
        for step in range(30):
            prob = mpc.MpcProblem(
                N=10, x=x, v_prev=v, limits=kinds.iv, objective=mpc.Maintain(2.5),
                lead=mpc.LeadSpec(xl, vl, kinds.iv.a_min), separation=d0s_spec(kinds))
            plan = mpc.plan_single_lane_fast(prob)
            assert plan.feasible, f"infeasible after {step} slots"
            v = plan.controls[0].v
            x += v * h
            # lead brakes somewhere between its limit and free accel
            dv = rng.uniform(kinds.iv.a_min * h, kinds.iv.a_max * h)
            vl = min(max(0.0, vl + dv), kinds.v_max)
            xl += vl * h


def test_split_schedule_validation():
    with pytest.raises(ValueError):
        mpc.Split((3.0, 2.0))
    mpc.Split((2.0, 2.5, 3.0))


def test_lane_change_lone_vehicle_completes(kinds):
    from mixedsim.protocols import simulate_lone_lane_change
    slots = simulate_lone_lane_change(10.0, kinds.iv, 3.5, omega_cap=1.5)
    assert slots is not None
    assert slots * kinds.h < 5.0  # completes in sensible time
    # terminal band is checked inside; completion implies |y - W| < W_l/20


def test_lane_change_respects_frozen_obstacle(kinds):
    # Frozen obstacle right ahead: no profile passes, planner reports
    # infeasible rather than fabricating a plan.
    prob = mpc.MpcProblem(
        N=20, x=0.0, v_prev=10.0, limits=kinds.iv,
        objective=mpc.LaneChange(3.5), pose=Pose(0.0, 0.0, 0.0),
        lane_target_y=3.5, omega_cap=1.5, corridor=(-1.75, 5.25),
        frozen_x=1.0, frozen_sep=mpc.make_d0s_spec(kinds.iv.a_min, kinds.h, kinds.d_min))
    plan = mpc.plan_lane_change(prob)
    assert not plan.feasible


def test_lane_change_constant_velocity_with_matched_lead(kinds):
    # A lead exactly at the steady gap with equal velocity: the planned
    # longitudinal profile never outruns the braking-lead envelope.
    v = 10.0
    g = hold_gap(v, kinds.iv.a_min, kinds.h, kinds.d_min)
    prob = mpc.MpcProblem(
        N=20, x=0.0, v_prev=v, limits=kinds.iv,
        objective=mpc.LaneChange(3.5), pose=Pose(0.0, 0.0, 0.0),
        lane_target_y=3.5, omega_cap=1.5, corridor=(-1.75, 5.25),
        lead=mpc.LeadSpec(g, v, kinds.iv.a_min), separation=d0s_spec(kinds))
    plan = mpc.plan_lane_change(prob)
    assert plan.feasible
    lead_x, lead_v = mpc.predict_lead(prob.lead, kinds.h, prob.N)
    x = 0.0
    for k, c in enumerate(plan.controls):
        x += c.v * kinds.h  # straight-line bound on the actual advance
        req = float(prob.separation.required(c.v, lead_v[k]))
        assert lead_x[k + 1] - x >= req - 1e-9


def test_lane_change_empty_velocity_region_infeasible(kinds):
    # Even standstill violates the frozen obstacle: region empty.
    prob = mpc.MpcProblem(
        N=5, x=0.0, v_prev=0.0, limits=kinds.iv,
        objective=mpc.LaneChange(3.5), pose=Pose(0.0, 0.0, 0.0),
        lane_target_y=3.5, omega_cap=1.5, corridor=(-1.75, 5.25),
        frozen_x=0.5, frozen_sep=mpc.make_d0s_spec(kinds.iv.a_min, kinds.h, kinds.d_min))
    plan = mpc.plan_lane_change(prob)
    assert not plan.feasible
