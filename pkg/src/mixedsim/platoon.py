"""Platoon lifecycle: membership, head election, join/split/maintain.

A platoon is a contiguous same-lane group of IVs listed head (front) first.
Only the head plans against external traffic; every other member tracks its
immediate predecessor.  When the vehicle behind the tail is an HV the whole
platoon restricts braking to a_h_min and member spacing is judged at that
rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from . import distances as dist
from .protocols import KindLimits
from .sets import nearest_follower
from .types import ProtocolState, Vehicle, VehicleKind, WorldState


class PlatoonError(Exception):
    pass


class NotAdjacent(PlatoonError):
    pass


class WrongLane(PlatoonError):
    pass


@dataclass
class Platoon:
    id: int
    members: list            # vehicle ids, head first
    d: float                 # intra-platoon spacing
    state: str = "Forming"   # Forming | Steady | Splitting
    lane: int = 0

    def head(self) -> int:
        return self.members[0]

    def tail(self) -> int:
        return self.members[-1]

    def predecessor_of(self, vid: int) -> Optional[int]:
        i = self.members.index(vid)
        return self.members[i - 1] if i > 0 else None


@dataclass
class SplitProgress:
    platoon_id: int
    index: int               # first member of the rear group
    d_start: float
    ramp_per_slot: float
    start_slot: int = 0
    target_factor: float = 1.2


@dataclass
class JoinProgress:
    platoon_id: int
    agent_id: int            # at Tail: the joining agent; at Head: the old head
    end: str                 # "Tail" | "Head"


class PlatoonManager:
    """Engine-side orchestration of all platoons in one world."""

    def __init__(self, kinds: KindLimits, horizon: int, join_tol: float = 0.05):
        self.kinds = kinds
        self.horizon = horizon
        self.join_tol = join_tol
        self.platoons: dict = {}
        self.joins: list = []
        self.splits: list = []
        self._next_id = 1

    # -- membership queries -------------------------------------------------

    def platoon_of(self, vid: int) -> Optional[Platoon]:
        for p in self.platoons.values():
            if vid in p.members:
                return p
        return None

    def role(self, vid: int):
        p = self.platoon_of(vid)
        if p is None:
            return None
        if vid == p.head():
            return ("head", p)
        return ("follower", p, p.predecessor_of(vid))

    def a_eff(self, p: Platoon, world: WorldState) -> float:
        """Whole-platoon braking rate: a_h_min when an HV follows the tail."""
        tail = world.by_id(p.tail())
        f = nearest_follower(tail, world)
        if f is not None and f.kind == VehicleKind.HV:
            return self.kinds.hv.a_min
        return self.kinds.iv.a_min

    def restricted(self, p: Platoon, world: WorldState) -> bool:
        return self.a_eff(p, world) == self.kinds.hv.a_min

    # -- lifecycle ops ------------------------------------------------------

    def form(self, member_ids: list, d: float, lane: int) -> Platoon:
        p = Platoon(self._next_id, list(member_ids), d, "Forming", lane)
        self._next_id += 1
        self.platoons[p.id] = p
        return p

    def request_join(self, agent: Vehicle, p: Platoon, end: str,
                     world: WorldState) -> JoinProgress:
        """Attach a free agent at the platoon tail or head.

        At the tail the agent closes in with the join objective; at the head
        the current head closes up on the agent and the head role moves to
        the agent on completion.
        """
        if agent.kind != VehicleKind.IV or self.platoon_of(agent.id) is not None:
            raise PlatoonError("join requires an unattached IV")
        if agent.beta != p.lane or agent.state != ProtocolState.FREE:
            raise WrongLane(f"agent {agent.id} not free in lane {p.lane}")
        if end == "Tail":
            tail = world.by_id(p.tail())
            if agent.pose.x >= tail.pose.x or self._someone_between(world, agent, tail, p):
                raise NotAdjacent("agent must be directly behind the tail")
            jp = JoinProgress(p.id, agent.id, "Tail")
        elif end == "Head":
            head = world.by_id(p.head())
            if agent.pose.x <= head.pose.x or self._someone_between(world, head, agent, p):
                raise NotAdjacent("agent must be directly ahead of the head")
            jp = JoinProgress(p.id, p.head(), "Head")
        else:
            raise ValueError(f"unknown end {end!r}")
        p.state = "Forming"
        self.joins.append(jp)
        return jp

    def request_split(self, p: Platoon, member_index: int,
                      slot: int = 0) -> SplitProgress:
        """Open the gap ahead of members[member_index] and partition there.

        member_index 1 releases the head; len(members)-1 releases the tail;
        anything between splits the platoon in two.
        """
        if not (1 <= member_index <= len(p.members) - 1):
            raise PlatoonError("split index must name a non-head member")
        ramp = max(p.d, 0.1) / self.horizon
        sp = SplitProgress(p.id, member_index, p.d, ramp, start_slot=slot)
        p.state = "Splitting"
        self.splits.append(sp)
        return sp

    def _someone_between(self, world: WorldState, rear: Vehicle, front: Vehicle,
                         p: Platoon) -> bool:
        for c in world.vehicles:
            if c.id in (rear.id, front.id) or c.beta != p.lane:
                continue
            if rear.pose.x < c.pose.x < front.pose.x:
                return True
        return False

    # -- per-slot progress --------------------------------------------------

    def split_gap_target(self, sp: SplitProgress, slots_elapsed: int) -> float:
        return sp.d_start + sp.ramp_per_slot * slots_elapsed

    def free_agent_gap(self, v: float, v_lead: float, a_eff: float) -> float:
        lim = self.kinds.iv
        return float(dist.d0s_req(v, v_lead, a_eff, lim.h, lim.d_min)) * 1.2 + v * lim.h

    def step_completions(self, world: WorldState):
        """Phase-7 bookkeeping: convergence checks and membership updates."""
        done_joins = []
        for jp in self.joins:
            p = self.platoons.get(jp.platoon_id)
            if p is None:
                done_joins.append(jp)
                continue
            if jp.end == "Tail":
                agent = world.by_id(jp.agent_id)
                tail = world.by_id(p.tail())
                if abs(world.gap(agent, tail) - p.d) <= self.join_tol:
                    p.members.append(jp.agent_id)
                    done_joins.append(jp)
            else:
                old_head = world.by_id(jp.agent_id)
                # The incoming agent is the vehicle directly ahead of the old head.
                ahead = [c for c in world.vehicles
                         if c.beta == p.lane and c.pose.x > old_head.pose.x]
                if not ahead:
                    done_joins.append(jp)
                    continue
                agent = min(ahead, key=lambda c: c.pose.x)
                if abs(world.gap(old_head, agent) - p.d) <= self.join_tol:
                    p.members.insert(0, agent.id)
                    done_joins.append(jp)
        for jp in done_joins:
            self.joins.remove(jp)
            p = self.platoons.get(jp.platoon_id)
            if p is not None and not self.joins_for(p.id):
                p.state = "Steady"

        done_splits = []
        for sp in self.splits:
            p = self.platoons.get(sp.platoon_id)
            if p is None:
                done_splits.append(sp)
                continue
            opener = world.by_id(p.members[sp.index])
            pred = world.by_id(p.members[sp.index - 1])
            need = self.free_agent_gap(opener.v_prev, pred.v_prev,
                                       self.a_eff(p, world))
            if world.gap(opener, pred) >= need:
                self._partition(p, sp.index)
                done_splits.append(sp)
        for sp in done_splits:
            self.splits.remove(sp)

    def joins_for(self, pid: int):
        return [j for j in self.joins if j.platoon_id == pid]

    def _partition(self, p: Platoon, index: int):
        front, rear = p.members[:index], p.members[index:]
        del self.platoons[p.id]
        for group in (front, rear):
            if len(group) >= 2:
                np_ = self.form(group, p.d, p.lane)
                np_.state = "Steady"
        # size-1 groups dissolve into free agents implicitly


def consecutive_iv_runs(world: WorldState, lane: int):
    """Maximal runs of adjacent free IVs in one lane, front first."""
    col = sorted((v for v in world.vehicles if v.beta == lane),
                 key=lambda v: -v.pose.x)
    runs, cur = [], []
    for v in col:
        if v.kind == VehicleKind.IV and v.state == ProtocolState.FREE:
            cur.append(v.id)
        else:
            if len(cur) >= 2:
                runs.append(cur)
            cur = []
    if len(cur) >= 2:
        runs.append(cur)
    return runs
