"""Unicycle update against a fine-grained ODE integration oracle."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedsim.kinematics import step_pose, velocity_bounds
from mixedsim.types import Control, Pose


def integrate_unicycle(pose, v, w, h, substeps=20000):
    """RK4 on the continuous unicycle with constant controls."""
    x, y, th = pose.x, pose.y, pose.theta
    dt = h / substeps
    for _ in range(substeps):
        k1 = (v * math.cos(th), v * math.sin(th), w)
        th2 = th + 0.5 * dt * k1[2]
        k2 = (v * math.cos(th2), v * math.sin(th2), w)
        k3 = k2
        th4 = th + dt * k3[2]
        k4 = (v * math.cos(th4), v * math.sin(th4), w)
        x += dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y += dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        th += dt * w
    return Pose(x, y, th)


def test_straight_line():
    p = step_pose(Pose(0, 0, 0), Control(10, 0), 0.01)
    assert (p.x, p.y, p.theta) == (0.1, 0.0, 0.0)


def test_pure_rotation():
    p = step_pose(Pose(0, 0, 0), Control(0, 0.5), 0.01)
    assert p.x == 0.0 and p.y == 0.0
    assert p.theta == pytest.approx(0.005, abs=1e-15)


def test_arc_matches_ode_oracle():
    p = step_pose(Pose(0, 0, 0), Control(10, 0.5), 0.01)
    q = integrate_unicycle(Pose(0, 0, 0), 10, 0.5, 0.01, substeps=10000)
    assert p.theta == pytest.approx(0.005, abs=1e-15)
    assert p.x == pytest.approx(q.x, abs=1e-9)
    assert p.y == pytest.approx(q.y, abs=1e-9)


def test_branch_continuity():
    for v in (0.0, 1.0, 10.0, 42.0):
        for th in (-0.5, 0.0, 0.3):
            a = step_pose(Pose(0, 0, th), Control(v, 1e-9), 0.01)
            b = step_pose(Pose(0, 0, th), Control(v, 0.0), 0.01)
            assert abs(a.x - b.x) < 1e-6
            assert abs(a.y - b.y) < 1e-6
            assert abs(a.theta - b.theta) < 1e-6


@given(th=st.floats(-0.7, 0.7), v=st.floats(0, 42),
       w=st.floats(-3, 3), h=st.sampled_from([0.01, 0.1, 0.5]))
@settings(max_examples=150, deadline=None)
def test_heading_additivity_and_distance_bound(th, v, w, h):
    p = step_pose(Pose(1.0, -2.0, th), Control(v, w), h)
    assert p.theta == pytest.approx(th + w * h, abs=1e-12)
    dist = math.hypot(p.x - 1.0, p.y + 2.0)
    assert dist <= v * h + 1e-9


@given(th=st.floats(-0.7, 0.7), v=st.floats(0, 42), w=st.floats(-3, 3))
@settings(max_examples=60, deadline=None)
def test_ode_consistency_randomized(th, v, w):
    h = 0.01
    p = step_pose(Pose(0, 0, th), Control(v, w), h)
    q = integrate_unicycle(Pose(0, 0, th), v, w, h, substeps=2000)
    assert abs(p.x - q.x) < 1e-9
    assert abs(p.y - q.y) < 1e-9


def test_velocity_bounds_examples(iv_limits):
    lo, hi = velocity_bounds(5.0, iv_limits)
    assert (lo, hi) == (pytest.approx(4.92), pytest.approx(5.04))
    lo, _ = velocity_bounds(0.0, iv_limits)
    assert lo == 0.0
    _, hi = velocity_bounds(42.0, iv_limits)
    assert hi == 42.0


@given(v=st.floats(0, 42))
@settings(max_examples=100, deadline=None)
def test_velocity_bounds_ordered(v):
    from mixedsim.gen import paper_limits
    lim = paper_limits().iv
    lo, hi = velocity_bounds(v, lim)
    assert 0.0 <= lo <= hi <= lim.v_max
