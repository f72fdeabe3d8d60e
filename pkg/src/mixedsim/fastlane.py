"""Vectorized single-lane runner for large randomized suites.

Simulates many independent single-lane worlds (straight or ring) in
lockstep, one numpy slot-update for all vehicles of all scenarios at once.
It reproduces the per-vehicle engine's longitudinal update bit for bit on
single-lane worlds (the equivalence is pinned by a test) but runs about
three orders of magnitude faster, which is what the thousand-seed safety
suites and the throughput sweeps need.

Scope: no lane changes (states stay free), static kinds and orderings,
optional platoons formed from consecutive runs of automated vehicles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import distances as dist
from .mpc import max_safe_velocity
from .protocols import HvParams, KindLimits
from .types import VehicleKind, WorldState

BREACH_TOL = 1e-9
BIG = 1e18


@dataclass
class FastResult:
    n_scenarios: int
    violations: np.ndarray       # per-scenario violation count
    collisions: np.ndarray       # per-scenario collision count
    min_margin: np.ndarray       # per-scenario worst (gap - requirement)
    throughput: Optional[np.ndarray] = None  # veh/h where a sensor was set
    steady_at: Optional[np.ndarray] = None
    history: Optional[list] = None  # [(x, v)] per slot when recording

    def total_violations(self) -> int:
        return int(self.violations.sum())


class FastLaneBatch:
    """All vehicles of all scenarios flattened into parallel arrays."""

    def __init__(self, kinds: KindLimits, hv_params: Optional[HvParams] = None):
        self.kinds = kinds
        self.hv = hv_params or HvParams()
        self._rows = []
        self._scen = []
        self._ring = []

    # -- construction ---------------------------------------------------------

    def add_world(self, world: WorldState, braking_schedule: Optional[dict] = None,
                  platoon_spacing: Optional[float] = None):
        """Append one single-lane world (vehicles ordered in x within lane 0)."""
        sid = len(self._scen)
        vs = sorted(world.vehicles, key=lambda v: -v.pose.x)  # front first
        ring = world.ring_length
        self._ring.append(ring if ring is not None else math.nan)
        sched = braking_schedule or {}
        n = len(vs)
        run = []
        for i, v in enumerate(vs):
            lead_local = i - 1 if i > 0 else (n - 1 if ring is not None and n > 1 else -1)
            follower = vs[i + 1] if i + 1 < n else (vs[0] if ring is not None and n > 1 else None)
            hv_behind = follower is not None and follower.kind == VehicleKind.HV
            run.append(dict(
                sid=sid, vid=v.id, x=v.pose.x, v=v.v_prev,
                is_hv=v.kind == VehicleKind.HV, lead_local=lead_local,
                hv_behind=hv_behind, v_des=v.v_des,
                objective=v.objective, episodes=sched.get(v.id, ()),
            ))
        if platoon_spacing is not None:
            self._mark_platoons(run, platoon_spacing, ring is not None)
        self._scen.append(run)
        return sid

    def _mark_platoons(self, run, d, is_ring):
        """Consecutive IV runs (length >= 2) become platoons: followers join
        at spacing d, the head keeps its own objective.  A group followed by
        an HV restricts the braking of every vehicle in it."""
        n = len(run)
        iv = [not r["is_hv"] for r in run]
        i = 0
        groups = []
        while i < n:
            if iv[i]:
                j = i
                while j < n and iv[j]:
                    j += 1
                if j - i >= 2:
                    groups.append((i, j))
                i = j
            else:
                i += 1
        # On an all-IV ring the whole loop is one run; the front vehicle
        # stays head and tracks its own cruise against the wrapped tail.
        for (i, j) in groups:
            after = run[j] if j < n else (run[0] if is_ring else None)
            restrict = after is not None and after["is_hv"]
            for k in range(i + 1, j):
                run[k]["platoon_join"] = d
            if restrict:
                for k in range(i, j):
                    run[k]["plat_restricted"] = True

    def build(self):
        rows = [r for scen in self._scen for r in scen]
        n = len(rows)
        k = self.kinds
        h, d_min, a_i, a_h = k.h, k.d_min, k.iv.a_min, k.hv.a_min
        g = self.arr = {}
        offs = {}
        base = 0
        for sid, scen in enumerate(self._scen):
            offs[sid] = base
            base += len(scen)
        self.n = n
        self.n_scen = len(self._scen)
        g["sid"] = np.array([r["sid"] for r in rows], dtype=np.int64)
        g["x"] = np.array([r["x"] for r in rows])
        g["v"] = np.array([r["v"] for r in rows])
        g["is_hv"] = np.array([r["is_hv"] for r in rows])
        g["lead"] = np.array([offs[r["sid"]] + r["lead_local"] if r["lead_local"] >= 0
                              else -1 for r in rows], dtype=np.int64)
        g["has_lead"] = g["lead"] >= 0
        g["hv_behind"] = np.array([r["hv_behind"] for r in rows])
        g["v_des"] = np.array([r["v_des"] for r in rows])
        g["ring"] = np.array([self._ring[r["sid"]] for r in rows])
        g["is_ring"] = ~np.isnan(g["ring"])

        iv = ~g["is_hv"]
        plat_restricted = np.array([r.get("plat_restricted", False) for r in rows])
        restricted = iv & (g["hv_behind"] | plat_restricted)
        g["restricted"] = restricted
        g["a_hard"] = np.where(g["is_hv"] | restricted, a_h, a_i)
        lead_safe = np.maximum(g["lead"], 0)
        lead_is_hv = g["is_hv"][lead_safe]
        # HVs presume their lead brakes at a_h; IVs use the lead's capability.
        g["lead_rate"] = np.where(g["is_hv"], a_h,
                                  np.where(lead_is_hv, a_h, a_i))
        g["lead_is_hv"] = lead_is_hv

        # Objectives: 0 cruise, 1 gap target (join/maintain), 2 split ramp.
        from .mpc import Follow, Join, Maintain, Split
        code = np.zeros(n, dtype=np.int64)
        d_t = np.zeros(n)
        ramp = np.zeros(n)
        member = np.zeros(n, dtype=bool)
        for i, r in enumerate(rows):
            if "platoon_join" in r:
                code[i], d_t[i] = 1, r["platoon_join"]
                member[i] = True
                continue
            o = r["objective"]
            if isinstance(o, (Join, Maintain)):
                code[i], d_t[i] = 1, o.d
            elif isinstance(o, Split):
                # A static split objective targets its next-slot spacing,
                # exactly as the per-vehicle engine reads it.
                code[i], d_t[i] = 1, o.d_f[1]
        code[~g["has_lead"]] = 0
        g["obj"] = code
        g["d_t"] = d_t
        g["ramp"] = ramp
        g["member"] = member
        g["converged"] = ~member  # joins count as converged once at spacing

        # Braking episodes, padded.
        K = max((len(r["episodes"]) for r in rows), default=0)
        starts = np.full((n, max(K, 1)), 2**62, dtype=np.int64)
        ends = np.full((n, max(K, 1)), 2**62, dtype=np.int64)
        for i, r in enumerate(rows):
            for j, (s, e) in enumerate(r["episodes"]):
                starts[i, j], ends[i, j] = s, e
        g["br_start"], g["br_end"] = starts, ends
        offsets = [0]
        for scen in self._scen[:-1]:
            offsets.append(offsets[-1] + len(scen))
        g["offsets"] = np.array(offsets, dtype=np.int64)

        # Planner cap specs (quadratic normal form), up to three per vehicle.
        def spec_arrays():
            return (np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n),
                    np.zeros(n, dtype=bool))

        specs = [spec_arrays() for _ in range(3)]

        def set_spec(j, mask, sc, ctc, ctl, ctq):
            s = specs[j]
            s[0][mask], s[1][mask], s[2][mask], s[3][mask] = sc, ctc, ctl, ctq
            s[4][mask] = True

        hvf = g["is_hv"] & g["has_lead"]
        ivf = iv & g["has_lead"]
        iv_hvlead = ivf & lead_is_hv & ~member
        iv_ivlead = ivf & ~lead_is_hv & ~member
        mem = member & g["has_lead"]

        inv_h = 1.0 / (-2.0 * a_h)
        inv_i = 1.0 / (-2.0 * a_i)
        ct0_h = -0.5 * a_h * h * h + d_min
        ct0_i = -0.5 * a_i * h * h + d_min
        cross = 1.5 * (a_h - a_i) * h / (-a_i)

        # HV followers and platoon members: matched-rate pair bound.
        set_spec(0, hvf, inv_h, ct0_h, -h, -inv_h)
        for rate, msk in ((a_h, mem & restricted), (a_i, mem & ~restricted)):
            invr = 1.0 / (-2.0 * rate)
            set_spec(0, msk, invr, -0.5 * rate * h * h + d_min, -h, -invr)
        # Free-agent IVs behind an IV: matched-rate bound, tightened when
        # an HV follows.
        set_spec(0, iv_ivlead & ~restricted, inv_i, ct0_i, -h, -inv_i)
        set_spec(0, iv_ivlead & restricted, inv_h, ct0_h, -h + cross, -inv_i)
        # IVs behind an HV: stopping-distance bound plus the matched-rate
        # hold, plus the tightened bound when an HV follows too.
        set_spec(0, iv_hvlead, inv_h, -0.5 * a_h * h * h, 0.0, 0.0)
        set_spec(1, iv_hvlead, inv_h, ct0_h, -h, -inv_h)
        set_spec(2, iv_hvlead & restricted, inv_h, ct0_h, -h + cross, -inv_i)
        self._cap_specs = specs

        # Monitor (published) requirements, up to two per vehicle.
        mspecs = [spec_arrays() for _ in range(2)]

        def set_mspec(j, mask, sc, ctc, ctl, ctq):
            s = mspecs[j]
            s[0][mask], s[1][mask], s[2][mask], s[3][mask] = sc, ctc, ctl, ctq
            s[4][mask] = True

        set_mspec(0, hvf, inv_h, ct0_h, -h, -inv_h)
        for rate, msk in ((a_h, mem & restricted), (a_i, mem & ~restricted)):
            invr = 1.0 / (-2.0 * rate)
            set_mspec(0, msk, invr, -0.5 * rate * h * h + d_min, -h, -invr)
        set_mspec(0, iv_ivlead & ~restricted, inv_i, ct0_i, -h, -inv_i)
        set_mspec(0, iv_ivlead & restricted, inv_h, ct0_h, -h - cross, -inv_i)
        set_mspec(0, iv_hvlead, inv_h, -0.5 * a_h * h * h, 0.0, 0.0)
        set_mspec(1, iv_hvlead & restricted, inv_h, ct0_h, -h - cross, -inv_i)
        self._mon_specs = mspecs
        return self

    # -- stepping ---------------------------------------------------------------

    def run(self, duration: float, sensor_x: Optional[float] = None,
            window_start: Optional[float] = None, record: bool = False,
            join_tol: float = 0.05) -> FastResult:
        k = self.kinds
        h, d_min, vmax, a_max = k.h, k.d_min, k.v_max, k.iv.a_max
        a_h = k.hv.a_min
        g = self.arr
        n_slots = int(round(duration / h))
        x, v = g["x"].copy(), g["v"].copy()
        lead = g["lead"]
        lead_safe = np.maximum(lead, 0)
        has_lead = g["has_lead"]
        sid = g["sid"]
        ring = g["ring"]
        is_ring = g["is_ring"]
        hvm = g["is_hv"]
        ivm = ~hvm
        a_hard = g["a_hard"]
        lead_rate = g["lead_rate"]
        obj = g["obj"]
        d_t = g["d_t"].copy()
        ramp = g["ramp"]
        member = g["member"]
        converged = g["converged"].copy()
        v_des = g["v_des"]
        hv = self.hv

        viol = np.zeros(self.n_scen, dtype=np.int64)
        coll = np.zeros(self.n_scen, dtype=np.int64)
        min_margin = np.full(self.n_scen, np.inf)
        crossings = np.zeros(self.n_scen, dtype=np.int64)
        steady_at = np.full(self.n_scen, np.nan)
        history = [] if record else None

        caps = self._cap_specs
        mons = self._mon_specs
        offsets = g["offsets"]
        has_split = bool(np.any(obj == 2))
        has_member = bool(np.any(member))
        inf = np.inf

        for slot in range(n_slots):
            vl = v[lead_safe]
            raw = x[lead_safe] - x
            gap = np.where(is_ring, raw % np.where(is_ring, ring, 1.0), raw)

            braking = np.any((g["br_start"] <= slot) & (slot < g["br_end"]), axis=1)

            v_pred = np.maximum(0.0, vl + lead_rate * h)
            avail = gap + v_pred * h
            v_lo = np.maximum(0.0, v + a_hard * h)
            v_hi = np.minimum(vmax, v + a_max * h)

            cap = np.full(self.n, inf)
            for sc, ctc, ctl, ctq, act in caps:
                ct = ctc + ctl * v_pred + ctq * v_pred * v_pred
                c = max_safe_velocity(avail, np.where(act, sc, 1.0), ct, h, d_min)
                cap = np.where(act & has_lead, np.minimum(cap, c), cap)

            # targets
            v_t = np.where(ivm, v_des, 0.0)
            jm = (obj >= 1) & has_lead
            if np.any(jm):
                tgt = (gap - d_t) / h + vl
                v_t = np.where(jm, tgt, v_t)
            if np.any(hvm):
                v_track = v + hv.gain * (hv.v_des - v) * h
                rule = dist.d0s_req(v, vl, a_h, h, d_min)
                g_des = np.maximum(rule + hv.gap_slack, hv.time_headway * v)
                v_beh = vl + hv.gap_gain * (gap - g_des)
                v_hv = np.where(has_lead, np.minimum(v_track, v_beh), v_track)
                v_t = np.where(hvm, v_hv, v_t)
            v_t = np.where(braking, v_lo, v_t)
            v0 = np.maximum(np.minimum(np.minimum(v_t, v_hi), cap), v_lo)

            x_new = x + v0 * h
            vl0 = v0[lead_safe]
            raw_new = x[lead_safe] + vl0 * h - x_new
            gap_new = np.where(is_ring, raw_new % np.where(is_ring, ring, 1.0), raw_new)

            req = np.zeros(self.n)
            for sc, ctc, ctl, ctq, act in mons:
                ct = ctc + ctl * vl0 + ctq * vl0 * vl0
                r = np.maximum(d_min, sc * v0 * v0 + h * v0 + ct)
                req = np.where(act, np.maximum(req, r), req)
            margin = np.where(has_lead, gap_new - req, inf)
            bad = has_lead & (margin < -BREACH_TOL)
            crash = has_lead & (gap_new <= 0.0)
            if np.any(bad):
                viol += np.bincount(sid[bad], minlength=self.n_scen)
            if np.any(crash):
                coll += np.bincount(sid[crash], minlength=self.n_scen)
            min_margin = np.minimum(min_margin,
                                    np.minimum.reduceat(margin, offsets))

            # split ramps grow, join convergence ratchets
            if has_split:
                d_t = np.where(obj == 2, d_t + ramp, d_t)
            if has_member:
                done = member & (np.abs(gap_new - d_t) <= join_tol)
                converged |= done
                fresh = np.isnan(steady_at)
                if np.any(fresh):
                    unconv = np.add.reduceat((~converged).astype(np.int64), offsets)
                    now = (slot + 1) * h
                    steady_at = np.where(fresh & (unconv == 0), now, steady_at)

            if sensor_x is not None:
                a = np.where(is_ring, x % ring, x)
                b = np.where(is_ring, x_new % ring, x_new)
                crossed = np.where(a <= b, (a < sensor_x) & (sensor_x <= b),
                                   (sensor_x > a) | (sensor_x <= b))
                if window_start is not None:
                    if (slot + 1) * h <= window_start:
                        crossed &= False
                if np.any(crossed):
                    np.add.at(crossings, sid[crossed], 1)

            x = np.where(is_ring, x_new % np.where(is_ring, ring, 1.0), x_new)
            v = v0
            if record:
                history.append((x.copy(), v.copy()))

        throughput = None
        if sensor_x is not None and window_start is not None:
            span = duration - window_start
            throughput = crossings / span * 3600.0
        return FastResult(self.n_scen, viol, coll, min_margin, throughput,
                          steady_at, history)
