"""Simulated vehicle-to-cloud channel with periodic publication and latency.

The store is single-writer (the simulation loop) and holds the full publish
history per vehicle, so queries at any timestamp see a consistent snapshot:
the newest record whose publish time is at most t - latency.
"""
from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field

from .geometry import WorldPoint
from .scene import VehicleState


class NoData(Exception):
    """No record satisfies the latency bound for the requested time."""


@dataclass(frozen=True)
class TwinRecord:
    vehicle_id: int
    position: WorldPoint
    speed: float
    publish_t: float


@dataclass(frozen=True)
class ChannelConfig:
    publish_period: float = 0.1
    latency: float = 0.0

    def __post_init__(self):
        if self.publish_period <= 0:
            raise ValueError("publish_period must be positive")
        if self.latency < 0:
            raise ValueError("latency must be nonnegative")


@dataclass(frozen=True)
class CloudAdvisory:
    target_id: int
    position: WorldPoint
    lane_change_probability: float
    issued_t: float

    def __post_init__(self):
        if not 0.0 <= self.lane_change_probability <= 1.0:
            raise ValueError("probability out of range")


@dataclass
class TwinStore:
    records: dict[int, list[TwinRecord]] = field(default_factory=dict)
    advisories: dict[int, list[CloudAdvisory]] = field(default_factory=dict)
    meta: dict[int, tuple[str, float]] = field(default_factory=dict)  # kind, length


def publish(store: TwinStore, state: VehicleState, t: float):
    """Append the vehicle's current pose; the anchor point is the body centroid."""
    record = TwinRecord(state.id, WorldPoint(state.s, state.y, 0.5 * state.height),
                        state.v, t)
    store.records.setdefault(state.id, []).append(record)
    store.meta.setdefault(state.id, (state.kind, state.length))


def query_target(store: TwinStore, vehicle_id: int, t: float,
                 cfg: ChannelConfig) -> TwinRecord:
    """Latest record visible at time t given the channel latency."""
    history = store.records.get(vehicle_id, [])
    bound = t - cfg.latency
    idx = bisect_right(history, bound + 1e-12, key=lambda r: r.publish_t)
    if idx == 0:
        raise NoData(f"no record for vehicle {vehicle_id} at or before t={bound:.3f}")
    return history[idx - 1]


def publish_advisory(store: TwinStore, advisory: CloudAdvisory):
    store.advisories.setdefault(advisory.target_id, []).append(advisory)


def query_advisory(store: TwinStore, vehicle_id: int, t: float,
                   cfg: ChannelConfig) -> CloudAdvisory | None:
    """Latest advisory visible at time t, or None before the first delivery."""
    history = store.advisories.get(vehicle_id, [])
    bound = t - cfg.latency
    idx = bisect_right(history, bound + 1e-12, key=lambda a: a.issued_t)
    return history[idx - 1] if idx else None


def gnss_distance(ego_camera_position: WorldPoint, twin: TwinRecord) -> float:
    """Euclidean distance from the camera to the cloud-reported position."""
    dx = ego_camera_position.x - twin.position.x
    dy = ego_camera_position.y - twin.position.y
    dz = ego_camera_position.z - twin.position.z
    return (dx * dx + dy * dy + dz * dz) ** 0.5


def write_channel_csv(store: TwinStore, path):
    rows = []
    for vid, history in store.records.items():
        advisories = store.advisories.get(vid, [])
        for rec in history:
            prob = ""
            idx = bisect_right(advisories, rec.publish_t + 1e-12, key=lambda a: a.issued_t)
            if idx:
                prob = f"{advisories[idx - 1].lane_change_probability:.6f}"
            rows.append((rec.publish_t, vid, rec.position.x, rec.position.y,
                         rec.position.z, rec.speed, prob))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "id", "x", "y", "z", "v", "probability"])
        for t, vid, x, y, z, v, prob in rows:
            w.writerow([f"{t:.2f}", vid, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}",
                        f"{v:.6f}", prob])
