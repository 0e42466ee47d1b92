"""Deterministic multi-lane highway micro-simulation.

The scenario reproduces an accident scene: two stopped trucks block the two
rightmost lanes, neighbor cars approach them, and a subset of neighbors
("potential changers") moves one lane left when close to the blockage. The
ego vehicle starts rearmost in the leftmost lane and is driven by one of two
reactive policies:

  guided    decelerates gently as soon as a neighbor ahead carries a high
            delivered lane-change probability, and acknowledges an alerted
            cut-in immediately;
  baseline  ignores neighbors until one's center enters the ego lane, then
            reacts after a fixed delay with a hard deceleration.

Integration is forward Euler at ``dt_sim``; the logged acceleration is the
realized (v_next - v) / dt so logs stay kinematically consistent even when
speeds clamp at zero.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import seeding
from .geometry import Cuboid3D, WorldPoint

CAR_DIMS = (4.5, 1.8, 1.5)
TRUCK_DIMS = (10.0, 2.5, 3.5)


class InfeasiblePlacement(Exception):
    """Vehicles could not be placed without overlap."""


@dataclass(frozen=True)
class LaneSpec:
    lane_count: int = 3
    lane_width: float = 3.5
    length: float = 300.0

    def __post_init__(self):
        if self.lane_count < 2:
            raise ValueError("need at least two lanes")
        if self.lane_width <= 0 or self.length <= 0:
            raise ValueError("lane_width and length must be positive")

    def center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return min(max(int(y // self.lane_width), 0), self.lane_count - 1)

    @property
    def road_width(self) -> float:
        return self.lane_count * self.lane_width


@dataclass
class VehicleState:
    id: int
    kind: str  # "car" | "truck" | "ego"
    s: float
    y: float
    v: float
    a: float
    lane: int
    length: float
    width: float
    height: float
    v_desired: float

    def cuboid(self) -> Cuboid3D:
        return Cuboid3D(WorldPoint(self.s, self.y, 0.5 * self.height),
                        self.length, self.width, self.height)


@dataclass(frozen=True)
class ManeuverPlan:
    vehicle_id: int
    t_start: float
    t_end: float
    from_lane: int
    to_lane: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("maneuver must have positive duration")
        if abs(self.to_lane - self.from_lane) != 1:
            raise ValueError("maneuver must move exactly one lane")


@dataclass(frozen=True)
class IdmParams:
    time_headway: float = 1.2
    a_max: float = 2.0
    comfort_decel: float = 2.5
    a_min: float = -8.0
    jam_gap: float = 2.0
    delta: float = 4.0


@dataclass(frozen=True)
class DriverParams:
    policy: str = "baseline"  # "guided" | "baseline"
    p_trigger: float = 0.5
    react_range: float = 60.0
    guided_decel: float = -2.0
    guided_margin: float = 1.5  # keep this much closing speed over a flagged threat
    caution_drop: float = 5.0   # never ease more than this below the desired speed
    aware_headway: float = 1.8  # time headway kept behind a leader that was flagged
    aware_gap_min: float = 5.0  # an expected merge closer than this stays an emergency
    aware_ttc_min: float = 3.5  # ... as does one with less projected time to contact
    late_decel: float = -6.0
    reaction_time: float = 0.75
    startle_overshoot: float = 3.0  # surprised braking sheds this much extra speed


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    dt_sim: float = 0.01
    duration: float = 30.0
    lanes: LaneSpec = field(default_factory=LaneSpec)
    neighbor_count: int = 6
    potential_changer_count: int = 3
    ego_v0: float = 19.0
    neighbor_v0: float = 17.0
    accident_s: float = 260.0
    spawn_min_s: float = 20.0
    spawn_max_s: float = 80.0
    lane_change_duration: float = 4.0
    trigger_distance: float = 80.0
    min_lead_gap: float = 15.0
    min_lag_gap: float = 10.0
    min_spawn_gap: float = 10.0
    idm: IdmParams = field(default_factory=IdmParams)
    driver: DriverParams = field(default_factory=DriverParams)

    def __post_init__(self):
        if self.dt_sim <= 0:
            raise ValueError("dt_sim must be positive")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if self.neighbor_count < 0 or self.potential_changer_count < 0:
            raise ValueError("counts must be nonnegative")
        if self.potential_changer_count > self.neighbor_count:
            raise ValueError("more changers than neighbors")

    def with_policy(self, policy: str) -> "ScenarioConfig":
        return replace(self, driver=replace(self.driver, policy=policy))


@dataclass
class EgoMemory:
    """Per-run driver bookkeeping for the ego policies."""

    encroach_t: dict[int, float] = field(default_factory=dict)
    alerted: set[int] = field(default_factory=set)
    startled: set[int] = field(default_factory=set)
    calmed: set[int] = field(default_factory=set)
    caution_v: float | None = None  # latched ease target while alerts persist
    decel_onset: float | None = None


def car_following_accel(follower: VehicleState, leader: VehicleState | None,
                        p: IdmParams) -> float:
    """Intelligent-Driver-Model acceleration, clamped to [a_min, a_max]."""
    v = follower.v
    vd = max(follower.v_desired, 0.1)
    acc = p.a_max * (1.0 - (v / vd) ** p.delta)
    if leader is not None:
        gap = leader.s - follower.s - 0.5 * (leader.length + follower.length)
        if gap <= 0.1:
            return p.a_min
        dv = v - leader.v
        s_star = p.jam_gap + max(0.0, v * p.time_headway
                                 + v * dv / (2.0 * math.sqrt(p.a_max * p.comfort_decel)))
        acc -= p.a_max * (s_star / gap) ** 2
    return min(max(acc, p.a_min), p.a_max)


def lateral_profile(q: float) -> float:
    """Smooth monotone 0..1 blend with zero slope at both ends."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("profile argument must be in [0, 1]")
    return q - math.sin(2.0 * math.pi * q) / (2.0 * math.pi)


def _leader_in_lane(vehicles, me: VehicleState, lane: int) -> VehicleState | None:
    best = None
    for other in vehicles:
        if other.id == me.id or other.lane != lane or other.s <= me.s:
            continue
        if best is None or other.s < best.s:
            best = other
    return best


def _follower_in_lane(vehicles, me: VehicleState, lane: int) -> VehicleState | None:
    best = None
    for other in vehicles:
        if other.id == me.id or other.lane != lane or other.s > me.s:
            continue
        if best is None or other.s > best.s:
            best = other
    return best


def _bumper_gap(rear: VehicleState, front: VehicleState) -> float:
    return front.s - rear.s - 0.5 * (front.length + rear.length)


def ego_policy(ego: VehicleState, others: list[VehicleState],
               guidance: dict[int, float] | None, params: DriverParams,
               idm: IdmParams, memory: EgoMemory, t: float) -> float:
    """Acceleration command for the ego under the selected policy."""
    guidance = guidance or {}
    guided = params.policy == "guided"

    if guided:
        for vid, prob in guidance.items():
            if prob > params.p_trigger:
                memory.alerted.add(vid)

    for other in others:
        if other.lane == ego.lane and other.s > ego.s and other.id not in memory.encroach_t:
            memory.encroach_t[other.id] = t

    def acknowledged(veh: VehicleState) -> bool:
        entered = memory.encroach_t.get(veh.id)
        if entered is None:
            return False
        if guided and veh.id in memory.alerted:
            return True
        return t >= entered + params.reaction_time

    ahead = [v for v in others if v.lane == ego.lane and v.s > ego.s and acknowledged(v)]
    leader = min(ahead, key=lambda v: v.s) if ahead else None
    follow_idm = idm
    if guided and leader is not None and leader.id in memory.alerted:
        # an advised driver hangs farther back behind the merged vehicle
        follow_idm = replace(idm, time_headway=max(idm.time_headway,
                                                   params.aware_headway))
    acc = car_following_accel(ego, leader, follow_idm)

    if leader is not None and guided and leader.id in memory.alerted:
        # A forewarned merge is regulated comfortably unless genuinely
        # critical (short gap or short projected time to contact).
        gap = _bumper_gap(ego, leader)
        closing = ego.v - leader.v
        safe_time = closing <= 0.2 or gap / max(closing, 1e-9) >= params.aware_ttc_min
        if gap > params.aware_gap_min and safe_time:
            acc = max(acc, -idm.comfort_decel)
    elif leader is not None and leader.id not in memory.calmed:
        # Startle response: hard braking at a late-noticed closing cut-in,
        # held past the point of matched speed before the driver relaxes.
        if leader.id not in memory.startled:
            if ego.v > leader.v + 0.05:
                memory.startled.add(leader.id)
            else:
                memory.calmed.add(leader.id)
        if leader.id in memory.startled:
            if ego.v > leader.v - params.startle_overshoot:
                acc = min(acc, params.late_decel)
            else:
                memory.calmed.add(leader.id)

    if guided:
        # Ease off while a flagged vehicle is ahead in an adjacent lane: shed
        # speed toward the threat's pace (never below a caution floor), then
        # hold there; the cap is latched so a recovering threat does not pull
        # the ego into accelerate-brake churn.
        cap_v = None
        for other in others:
            if other.lane == ego.lane or abs(other.lane - ego.lane) != 1:
                continue
            if not 0.0 < other.s - ego.s <= params.react_range:
                continue
            if guidance.get(other.id, 0.0) > params.p_trigger:
                cap = max(other.v + params.guided_margin,
                          ego.v_desired - params.caution_drop)
                cap_v = cap if cap_v is None else min(cap_v, cap)
        if cap_v is None:
            memory.caution_v = None
        else:
            if memory.caution_v is not None:
                cap_v = min(cap_v, memory.caution_v)
            memory.caution_v = cap_v
            if ego.v > cap_v:
                acc = min(acc, params.guided_decel)
            elif ego.v > cap_v - 1.0:
                acc = min(acc, 0.0)

    acc = min(max(acc, idm.a_min), idm.a_max)
    if memory.decel_onset is None and acc < -0.5:
        memory.decel_onset = t
    return acc


class Scenario:
    """Mutable simulation state; advance with step(), then build_log()."""

    def __init__(self, cfg: ScenarioConfig, vehicles: list[VehicleState],
                 ego_id: int, changer_ids: set[int]):
        self.cfg = cfg
        self.lanes = cfg.lanes
        self.vehicles = vehicles
        self.ego_id = ego_id
        self.changer_ids = set(changer_ids)
        self.pending_changers = set(changer_ids)
        self.active_maneuvers: dict[int, ManeuverPlan] = {}
        self.plans: list[ManeuverPlan] = []
        self.memory = EgoMemory()
        self.collisions: list[tuple[float, int, int]] = []
        self.step_count = 0
        self._by_id = {v.id: v for v in vehicles}
        self._times: list[float] = []
        self._rows: dict[int, list[list[float]]] = {
            v.id: [[], [], [], [], []] for v in vehicles}  # s, y, v, a, lane
        self._record()

    @property
    def t(self) -> float:
        return self.step_count * self.cfg.dt_sim

    @property
    def ego(self) -> VehicleState:
        return self._by_id[self.ego_id]

    def vehicle(self, vid: int) -> VehicleState:
        return self._by_id[vid]

    def _record(self):
        self._times.append(self.t)
        for v in self.vehicles:
            rows = self._rows[v.id]
            rows[0].append(v.s)
            rows[1].append(v.y)
            rows[2].append(v.v)
            rows[3].append(v.a)
            rows[4].append(v.lane)

    def build_log(self) -> "TrajectoryLog":
        meta = {v.id: (v.kind, v.length, v.width, v.height) for v in self.vehicles}
        data = {vid: tuple(np.asarray(col) for col in cols)
                for vid, cols in self._rows.items()}
        return TrajectoryLog(
            times=np.asarray(self._times),
            dt=self.cfg.dt_sim,
            meta=meta,
            data=data,
            plans=list(self.plans),
            ego_id=self.ego_id,
            collisions=list(self.collisions),
            lanes=self.lanes,
        )


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Place trucks, neighbors, and the ego; same seed gives identical layout."""
    rng = seeding.rng_for(cfg.seed, seeding.SCENARIO)
    lanes = cfg.lanes
    vehicles: list[VehicleState] = []

    ego = VehicleState(id=0, kind="ego", s=0.0, y=lanes.center(lanes.lane_count - 1),
                       v=cfg.ego_v0, a=0.0, lane=lanes.lane_count - 1,
                       length=CAR_DIMS[0], width=CAR_DIMS[1], height=CAR_DIMS[2],
                       v_desired=cfg.ego_v0)
    vehicles.append(ego)

    changer_lane = lanes.lane_count - 2
    placed: dict[int, list[tuple[float, float]]] = {}

    def try_place(vid: int, lane: int | None) -> VehicleState:
        # lane None means any right lane; redraw per attempt so one crowded
        # lane cannot sink the whole placement.
        for _ in range(1000):
            chosen = lane if lane is not None else int(rng.integers(0, lanes.lane_count - 1))
            s = rng.uniform(cfg.spawn_min_s, cfg.spawn_max_s)
            ok = all(abs(s - other_s) >= cfg.min_spawn_gap + 0.5 * (CAR_DIMS[0] + other_len)
                     for other_s, other_len in placed.get(chosen, []))
            if ok:
                placed.setdefault(chosen, []).append((s, CAR_DIMS[0]))
                return VehicleState(id=vid, kind="car", s=s, y=lanes.center(chosen),
                                    v=cfg.neighbor_v0, a=0.0, lane=chosen,
                                    length=CAR_DIMS[0], width=CAR_DIMS[1],
                                    height=CAR_DIMS[2], v_desired=cfg.neighbor_v0)
        raise InfeasiblePlacement(f"could not place vehicle {vid} without overlap")

    changer_ids = set()
    for i in range(cfg.neighbor_count):
        vid = 1 + i
        if i < cfg.potential_changer_count:
            changer_ids.add(vid)
            vehicles.append(try_place(vid, changer_lane))
        else:
            vehicles.append(try_place(vid, None))

    for j, lane in enumerate((0, 1)):
        vehicles.append(VehicleState(
            id=cfg.neighbor_count + 1 + j, kind="truck", s=cfg.accident_s,
            y=lanes.center(lane), v=0.0, a=0.0, lane=lane,
            length=TRUCK_DIMS[0], width=TRUCK_DIMS[1], height=TRUCK_DIMS[2],
            v_desired=0.0))

    return Scenario(cfg, vehicles, ego_id=0, changer_ids=changer_ids)


def _gap_acceptable(scn: Scenario, veh: VehicleState, to_lane: int) -> bool:
    cfg = scn.cfg
    lead = _leader_in_lane(scn.vehicles, veh, to_lane)
    if lead is not None and _bumper_gap(veh, lead) <= cfg.min_lead_gap:
        return False
    lag = _follower_in_lane(scn.vehicles, veh, to_lane)
    if lag is not None and _bumper_gap(lag, veh) <= cfg.min_lag_gap:
        return False
    return True


def _maybe_trigger_changes(scn: Scenario):
    cfg = scn.cfg
    for vid in sorted(scn.pending_changers):
        veh = scn.vehicle(vid)
        if veh.lane >= scn.lanes.lane_count - 1:
            scn.pending_changers.discard(vid)
            continue
        if cfg.accident_s - veh.s > cfg.trigger_distance:
            continue
        to_lane = veh.lane + 1
        if _gap_acceptable(scn, veh, to_lane):
            plan = ManeuverPlan(vid, scn.t, scn.t + cfg.lane_change_duration,
                                veh.lane, to_lane)
            scn.plans.append(plan)
            scn.active_maneuvers[vid] = plan
            scn.pending_changers.discard(vid)


def _neighbor_accel(scn: Scenario, veh: VehicleState) -> float:
    lanes_to_watch = {veh.lane}
    plan = scn.active_maneuvers.get(veh.id)
    if plan is not None:
        lanes_to_watch.update((plan.from_lane, plan.to_lane))
    acc = None
    for lane in sorted(lanes_to_watch):
        leader = _leader_in_lane(scn.vehicles, veh, lane)
        a = car_following_accel(veh, leader, scn.cfg.idm)
        acc = a if acc is None else min(acc, a)
    return acc


def step(scn: Scenario, guidance: dict[int, float] | None = None):
    """Advance every vehicle by one dt_sim tick."""
    cfg = scn.cfg
    dt = cfg.dt_sim

    _maybe_trigger_changes(scn)

    accels: dict[int, float] = {}
    for veh in scn.vehicles:
        if veh.kind == "truck":
            accels[veh.id] = 0.0
        elif veh.id == scn.ego_id:
            others = [v for v in scn.vehicles if v.id != scn.ego_id]
            accels[veh.id] = ego_policy(veh, others, guidance, cfg.driver,
                                        cfg.idm, scn.memory, scn.t)
        else:
            accels[veh.id] = _neighbor_accel(scn, veh)

    for veh in scn.vehicles:
        a = accels[veh.id]
        new_v = max(0.0, veh.v + a * dt)
        veh.s += veh.v * dt
        veh.a = (new_v - veh.v) / dt
        veh.v = new_v

    scn.step_count += 1
    t_new = scn.t

    for vid, plan in list(scn.active_maneuvers.items()):
        veh = scn.vehicle(vid)
        q = min((t_new - plan.t_start) / (plan.t_end - plan.t_start), 1.0)
        origin = scn.lanes.center(plan.from_lane)
        target = scn.lanes.center(plan.to_lane)
        veh.y = origin + (target - origin) * lateral_profile(q)
        veh.lane = scn.lanes.lane_of(veh.y)
        if t_new >= plan.t_end:
            veh.y = target
            veh.lane = plan.to_lane
            del scn.active_maneuvers[vid]

    by_lane: dict[int, list[VehicleState]] = {}
    for veh in scn.vehicles:
        by_lane.setdefault(veh.lane, []).append(veh)
    for members in by_lane.values():
        members.sort(key=lambda v: v.s)
        for first, second in zip(members, members[1:]):
            if _bumper_gap(first, second) < 0.0:
                scn.collisions.append((t_new, first.id, second.id))

    scn._record()


def run_steps(scn: Scenario, n_steps: int, guidance_fn=None):
    """Convenience loop: guidance_fn(t) supplies the per-tick probability map."""
    for _ in range(n_steps):
        guidance = guidance_fn(scn.t) if guidance_fn is not None else None
        step(scn, guidance)


@dataclass
class TrajectoryLog:
    """Time-indexed kinematic states for a constant vehicle roster."""

    times: np.ndarray
    dt: float
    meta: dict[int, tuple[str, float, float, float]]  # kind, length, width, height
    data: dict[int, tuple[np.ndarray, ...]]  # s, y, v, a, lane per vehicle
    plans: list[ManeuverPlan]
    ego_id: int
    collisions: list[tuple[float, int, int]]
    lanes: LaneSpec

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self.data)

    def kind_of(self, vid: int) -> str:
        return self.meta[vid][0]

    def length_of(self, vid: int) -> float:
        return self.meta[vid][1]

    def column(self, vid: int, name: str) -> np.ndarray:
        idx = {"s": 0, "y": 1, "v": 2, "a": 3, "lane": 4}[name]
        return self.data[vid][idx]

    def index_of(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-6:
            raise KeyError(f"time {t} not on the log grid")
        return i

    def state_at(self, vid: int, i: int) -> VehicleState:
        kind, length, width, height = self.meta[vid]
        s, y, v, a, lane = (self.data[vid][k][i] for k in range(5))
        return VehicleState(id=vid, kind=kind, s=float(s), y=float(y), v=float(v),
                            a=float(a), lane=int(lane), length=length, width=width,
                            height=height, v_desired=float(v))

    def states_at(self, i: int) -> list[VehicleState]:
        return [self.state_at(vid, i) for vid in self.vehicle_ids]

    def resample(self, period: float) -> "TrajectoryLog":
        stride = int(round(period / self.dt))
        if stride < 1 or abs(stride * self.dt - period) > 1e-9:
            raise ValueError(f"period {period} is not a multiple of dt {self.dt}")
        if stride == 1:
            return self
        data = {vid: tuple(col[::stride] for col in cols)
                for vid, cols in self.data.items()}
        return TrajectoryLog(times=self.times[::stride], dt=period, meta=self.meta,
                             data=data, plans=self.plans, ego_id=self.ego_id,
                             collisions=self.collisions, lanes=self.lanes)


def extract_lane_changes(log: TrajectoryLog, settle_tol: float = 1e-6,
                         center_tol: float = 0.3) -> list[ManeuverPlan]:
    """Recover maneuvers from lateral motion in a log.

    A lane-index transition marks the crossing; the end point is the first
    sample after it that is both near the new lane center (within
    ``center_tol``) and laterally settled (per-sample motion below
    ``settle_tol``). The start point mirrors this backwards.
    """
    events: list[ManeuverPlan] = []
    for vid in log.vehicle_ids:
        y = log.column(vid, "y")
        lane = log.column(vid, "lane").astype(int)
        n = len(y)
        k = 1
        while k < n:
            if lane[k] == lane[k - 1]:
                k += 1
                continue
            from_lane, to_lane = int(lane[k - 1]), int(lane[k])
            if abs(to_lane - from_lane) != 1:  # should not happen on sim logs
                k += 1
                continue
            j = k
            while j > 0 and abs(y[j] - y[j - 1]) > settle_tol:
                j -= 1
            t_start = float(log.times[j])
            j = k
            target = log.lanes.center(to_lane)
            while j < n - 1 and (abs(y[j] - y[j - 1]) > settle_tol
                                 or abs(y[j] - target) >= center_tol):
                j += 1
            t_end = float(log.times[j])
            if t_end > t_start:
                events.append(ManeuverPlan(vid, t_start, t_end, from_lane, to_lane))
            k = j + 1
    events.sort(key=lambda e: (e.t_start, e.vehicle_id))
    return events


def write_trajectory_csv(log: TrajectoryLog, path, period: float = 0.1):
    sampled = log.resample(period)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "id", "kind", "s", "y", "v", "a", "lane"])
        for i, t in enumerate(sampled.times):
            for vid in sampled.vehicle_ids:
                s, y, v, a, lane = (sampled.data[vid][k][i] for k in range(5))
                w.writerow([f"{t:.2f}", vid, sampled.kind_of(vid), f"{s:.6f}",
                            f"{y:.6f}", f"{v:.6f}", f"{a:.6f}", int(lane)])


def write_maneuvers_csv(plans: list[ManeuverPlan], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "t_start", "t_end", "from_lane", "to_lane"])
        for p in plans:
            w.writerow([p.vehicle_id, f"{p.t_start:.3f}", f"{p.t_end:.3f}",
                        p.from_lane, p.to_lane])
