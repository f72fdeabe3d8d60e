"""Scenario configuration: TOML ingestion, validation, serialization.

Configs are flat sectioned TOML.  A scenario either lists its roster in
[[vehicle]] tables or describes a [generator]; the remaining sections
carry limits, the HV model, and run settings.  parse -> serialize ->
parse round-trips exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import tomli

from . import gen, mpc
from .engine import Engine, EngineParams
from .protocols import HvParams, KindLimits
from .types import (LaneGeometry, LimitSet, Pose, ProtocolState, Vehicle,
                    VehicleKind, WorldState)


class ConfigError(Exception):
    pass


@dataclass
class ScenarioConfig:
    road_kind: str = "straight"          # straight | ring
    ring_length: Optional[float] = None
    lane_min: int = 0
    lane_max: int = 0
    lane_width: float = 3.5

    h: float = 0.01
    d_min: float = 2.0
    v_max: float = 42.0
    a_max: float = 4.0
    a_min_iv: float = -8.0
    a_min_hv: float = -6.0
    theta_max: float = 0.7

    duration: float = 10.0
    seed: int = 0
    horizon: int = 20
    planner: str = "greedy"
    omega_cap: float = 1.5
    trace_stride: int = 10
    sensor_x: Optional[float] = None
    iv_lane_request_rate: float = 0.0

    hv: HvParams = field(default_factory=HvParams)

    platoon_spacing: float = 2.5
    platoon_auto_form: bool = False
    discount: float = 0.1

    vehicles: list = field(default_factory=list)   # dicts from [[vehicle]]
    generator: Optional[dict] = None

    # -- derived objects -----------------------------------------------------

    def kinds(self) -> KindLimits:
        iv = LimitSet(a_min=self.a_min_iv, a_max=self.a_max, v_max=self.v_max,
                      theta_min=-self.theta_max, theta_max=self.theta_max,
                      h=self.h, d_min=self.d_min)
        hv = LimitSet(a_min=self.a_min_hv, a_max=self.a_max, v_max=self.v_max,
                      theta_min=-self.theta_max, theta_max=self.theta_max,
                      h=self.h, d_min=self.d_min)
        return KindLimits(iv=iv, hv=hv)

    def engine_params(self) -> EngineParams:
        return EngineParams(
            horizon=self.horizon, planner=self.planner, omega_cap=self.omega_cap,
            hv=self.hv, iv_lane_request_rate=self.iv_lane_request_rate,
            trace_stride=self.trace_stride, sensor_x=self.sensor_x)

    def build_world(self):
        """Returns (world, braking_schedule)."""
        kinds = self.kinds()
        if self.vehicles:
            geo = LaneGeometry(self.lane_min, self.lane_max, self.lane_width)
            vs = []
            for i, row in enumerate(self.vehicles):
                kind = VehicleKind(row["kind"])
                lane = int(row["lane"])
                alpha = int(row.get("target_lane", lane))
                state = ProtocolState.FREE if alpha == lane else ProtocolState.WAIT
                veh = Vehicle(
                    id=int(row.get("id", i)), kind=kind,
                    pose=Pose(float(row["x"]), geo.center_y(lane), 0.0),
                    v_prev=float(row["v"]), beta=lane, alpha=alpha, state=state,
                    turn_signal=(kind == VehicleKind.HV and state != ProtocolState.FREE),
                    limits=kinds.of(kind),
                    v_des=float(row.get("v_des", row["v"])))
                if kind == VehicleKind.IV:
                    veh.objective = mpc.Follow(())
                vs.append(veh)
            ring = self.ring_length if self.road_kind == "ring" else None
            world = WorldState(vs, geo, self.h, ring_length=ring)
            world.validate()
            return world, {}
        if self.generator is None:
            raise ConfigError("config needs [[vehicle]] entries or a [generator]")
        gspec = self.generator
        count = int(gspec.get("count", 20))
        frac = float(gspec.get("iv_fraction", 0.5))
        braking = float(gspec.get("braking_rate", 0.0))
        if self.road_kind == "ring":
            world = gen.ring_world(self.seed, count, frac, kinds,
                                   spacing=float(gspec.get("spacing", 5.0)),
                                   v0=float(gspec.get("v0", 5.0)),
                                   lane_width=self.lane_width)
            for v in world.vehicles:
                v.v_des = float(gspec.get("v_des", v.v_prev))
            return world, {}
        if self.lane_max > self.lane_min:
            world = gen.multi_lane_world(
                self.seed, kinds, self.lane_min, self.lane_max,
                per_lane=(2, 5), iv_fraction=frac, lane_width=self.lane_width)
            return world, {}
        world, sched = gen.single_lane_world(
            self.seed, count, frac, kinds, duration_s=self.duration,
            braking_rate=braking, lane_width=self.lane_width)
        return world, sched


_SECTIONS = {
    "road": {"kind": "road_kind", "ring_length": "ring_length",
             "lane_min": "lane_min", "lane_max": "lane_max",
             "lane_width": "lane_width"},
    "limits": {"h": "h", "d_min": "d_min", "v_max": "v_max", "a_max": "a_max",
               "a_min_iv": "a_min_iv", "a_min_hv": "a_min_hv",
               "theta_max": "theta_max"},
    "run": {"duration": "duration", "seed": "seed", "horizon": "horizon",
            "planner": "planner", "omega_cap": "omega_cap",
            "trace_stride": "trace_stride", "sensor_x": "sensor_x",
            "iv_lane_request_rate": "iv_lane_request_rate"},
    "platoon": {"spacing": "platoon_spacing", "auto_form": "platoon_auto_form",
                "discount": "discount"},
}

_HV_KEYS = ("v_des", "gain", "gap_gain", "time_headway", "gap_slack",
            "lane_request_rate", "lc_duration")


def parse_config(text: str, name: str = "<config>") -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"{name}: {e}") from e
    cfg = ScenarioConfig()
    for section, keys in _SECTIONS.items():
        table = data.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"{name}: [{section}] must be a table")
        for key, value in table.items():
            if key not in keys:
                raise ConfigError(f"{name}: unknown key {key!r} in [{section}]")
            setattr(cfg, keys[key], value)
    hv_table = data.get("hv_model", {})
    for key, value in hv_table.items():
        if key not in _HV_KEYS:
            raise ConfigError(f"{name}: unknown key {key!r} in [hv_model]")
        setattr(cfg.hv, key, value)
    cfg.vehicles = list(data.get("vehicle", []))
    for i, row in enumerate(cfg.vehicles):
        for req in ("kind", "lane", "x", "v"):
            if req not in row:
                raise ConfigError(f"{name}: [[vehicle]] #{i + 1} missing {req!r}")
        if row["kind"] not in ("HV", "IV"):
            raise ConfigError(f"{name}: [[vehicle]] #{i + 1} kind must be HV or IV")
    cfg.generator = data.get("generator")
    validate_config(cfg, name)
    return cfg


def load_config(path: str) -> ScenarioConfig:
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    return parse_config(text, name=path)


def validate_config(cfg: ScenarioConfig, name: str = "<config>"):
    try:
        kinds = cfg.kinds()
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from e
    if cfg.road_kind not in ("straight", "ring"):
        raise ConfigError(f"{name}: road.kind must be straight or ring")
    if cfg.road_kind == "ring" and not cfg.ring_length and not cfg.generator:
        raise ConfigError(f"{name}: ring road needs ring_length or a generator")
    if cfg.planner not in ("greedy", "qp"):
        raise ConfigError(f"{name}: run.planner must be greedy or qp")
    if cfg.duration <= 0:
        raise ConfigError(f"{name}: run.duration must be positive")
    n_slots = cfg.duration / cfg.h
    if abs(n_slots - round(n_slots)) > 1e-6:
        raise ConfigError(f"{name}: run.duration must be a multiple of h")
    floor = -kinds.iv.a_min * cfg.h * cfg.h / 2.0 + cfg.d_min
    if cfg.platoon_spacing < floor:
        raise ConfigError(
            f"{name}: platoon.spacing {cfg.platoon_spacing} below the lower "
            f"bound {floor:.6f}")
    for i, row in enumerate(cfg.vehicles):
        lane = int(row["lane"])
        if not (cfg.lane_min <= lane <= cfg.lane_max):
            raise ConfigError(f"{name}: [[vehicle]] #{i + 1} lane {lane} out of range")
        tl = int(row.get("target_lane", lane))
        if not (cfg.lane_min <= tl <= cfg.lane_max):
            raise ConfigError(f"{name}: [[vehicle]] #{i + 1} target_lane out of range")
        if not (0.0 <= float(row["v"]) <= cfg.v_max):
            raise ConfigError(f"{name}: [[vehicle]] #{i + 1} v outside [0, v_max]")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    return str(value)


def serialize_config(cfg: ScenarioConfig) -> str:
    """Emit the config back as TOML; parse(serialize(x)) == x."""
    out = []
    for section, keys in _SECTIONS.items():
        rows = []
        for key, attr in keys.items():
            value = getattr(cfg, attr)
            if value is None:
                continue
            rows.append(f"{key} = {_fmt(value)}")
        if rows:
            out.append(f"[{section}]")
            out.extend(rows)
            out.append("")
    out.append("[hv_model]")
    for key in _HV_KEYS:
        out.append(f"{key} = {_fmt(getattr(cfg.hv, key))}")
    out.append("")
    if cfg.generator:
        out.append("[generator]")
        for key, value in cfg.generator.items():
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    for row in cfg.vehicles:
        out.append("[[vehicle]]")
        for key, value in row.items():
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


def config_equal(a: ScenarioConfig, b: ScenarioConfig) -> bool:
    return serialize_config(a) == serialize_config(b)
