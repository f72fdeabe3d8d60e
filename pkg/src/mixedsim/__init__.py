"""Deterministic microsimulator and planning library for mixed traffic of
human-driven and automated vehicles, with closed-form safe-following
algebra, MPC-style planners, platoon maneuvers, lane-change coordination
protocols, and a runtime monitor for the safety invariants."""

from .distances import d0s, d1s, d1s_operational, ds
from .engine import Engine, EngineParams, RunResult, Violation, measure_throughput, monitor
from .kinematics import step_pose, velocity_bounds
from .mpc import (Follow, Join, LaneChange, Maintain, MpcPlan, MpcProblem,
                  Split, fallback_brake, plan_lane_change, plan_single_lane,
                  plan_single_lane_fast)
from .platoon import Platoon, PlatoonManager
from .protocols import (GateReport, HvParams, KindLimits, hv_lane_change_gate,
                        hv_single_lane_separation, iv_following_requirement,
                        iv_lane_change_gate, tmin_bound)
from .sets import SafetySets, compute_sets, nearest_follower, nearest_lead, update_c_star
from .types import (Control, LaneGeometry, LimitSet, Pose, ProtocolState,
                    Vehicle, VehicleKind, WorldState, lane_membership)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
