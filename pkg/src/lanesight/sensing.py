"""Synthetic sensor stack: ground-truth boxes, depth rasters, detector noise.

The depth raster uses a planar per-vehicle model: every pixel of a vehicle's
projected hull carries the camera-frame depth of the body face nearest the
camera, with nearest-wins resolution where hulls overlap. That face is what
a rear-mounted depth sample would measure, which is the quantity the depth
evaluation stage averages.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import seeding
from .geometry import BehindCamera, Box2D, Camera, project_cuboid_hull, world_to_camera
from .scene import VehicleState


@dataclass
class DepthMap:
    """Row-major raster of camera-to-surface distance in meters."""

    width: int
    height: int
    values: np.ndarray
    far_value: float = 1000.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.height, self.width)

    @classmethod
    def background(cls, width: int, height: int, far_value: float = 1000.0) -> "DepthMap":
        return cls(width, height, np.full((height, width), far_value), far_value)


@dataclass(frozen=True)
class Detection:
    box: Box2D
    class_tag: str = "vehicle"
    source_id: int | None = None  # ground-truth id, used for scoring only


@dataclass(frozen=True)
class DetectorNoiseModel:
    edge_jitter_sigma: float = 2.0
    miss_prob: float = 0.0
    depth_noise_sigma: float = 0.1
    false_positive_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.edge_jitter_sigma < 0 or self.depth_noise_sigma < 0:
            raise ValueError("noise sigmas must be nonnegative")
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must be a probability")

    def for_frame(self, frame_index: int) -> "DetectorNoiseModel":
        return replace(self, seed=seeding.derived_seed(self.seed, seeding.DETECTOR,
                                                       frame_index))


@dataclass
class SensorFrame:
    t: float
    detections: list[Detection]
    depth: DepthMap
    camera: Camera


def _visible_hull(state: VehicleState, camera: Camera) -> Box2D | None:
    try:
        box = project_cuboid_hull(state.cuboid(), camera.extrinsics, camera.intrinsics)
    except BehindCamera:
        return None
    return box if box.area > 0 else None


def render_truth_boxes(states: list[VehicleState], camera: Camera) -> list[tuple[int, Box2D]]:
    """Project each fully-visible vehicle body to its axis-aligned pixel hull."""
    out = []
    for state in states:
        box = _visible_hull(state, camera)
        if box is not None:
            out.append((state.id, box))
    return out


def _nearest_face_depth(state: VehicleState, camera: Camera) -> float:
    return min(world_to_camera(c, camera.extrinsics).z_c for c in state.cuboid().corners())


def render_depth_map(states: list[VehicleState], camera: Camera,
                     noise: DetectorNoiseModel | None = None,
                     far_value: float = 1000.0) -> DepthMap:
    """Planar depth raster: hull pixels get the vehicle's nearest-face depth.

    Overlaps resolve nearest-wins; background pixels carry far_value. With a
    noise model, per-pixel Gaussian noise is added on vehicle regions only.
    """
    intr = camera.intrinsics
    dm = DepthMap.background(intr.width, intr.height, far_value)
    layers = []
    for state in states:
        box = _visible_hull(state, camera)
        if box is None:
            continue
        layers.append((_nearest_face_depth(state, camera), box))
    layers.sort(key=lambda item: -item[0])  # far first, near overwrites
    covered = np.zeros_like(dm.values, dtype=bool)
    for depth, box in layers:
        u0, u1 = int(np.floor(box.u_min)), int(np.ceil(box.u_max))
        v0, v1 = int(np.floor(box.v_min)), int(np.ceil(box.v_max))
        dm.values[v0:v1, u0:u1] = depth
        covered[v0:v1, u0:u1] = True
    if noise is not None and noise.depth_noise_sigma > 0 and covered.any():
        rng = seeding.rng_for(noise.seed, seeding.DEPTH)
        rows = np.flatnonzero(covered.any(axis=1))
        cols = np.flatnonzero(covered.any(axis=0))
        r0, r1 = rows[0], rows[-1] + 1
        c0, c1 = cols[0], cols[-1] + 1
        patch = covered[r0:r1, c0:c1]
        jitter = rng.normal(0.0, noise.depth_noise_sigma, size=patch.shape)
        region = dm.values[r0:r1, c0:c1]
        dm.values[r0:r1, c0:c1] = np.where(patch, np.maximum(region + jitter, 0.01),
                                           region)
    return dm


def emulate_detections(truth_boxes: list[tuple[int, Box2D]], noise: DetectorNoiseModel,
                       width: int, height: int) -> list[Detection]:
    """Drop, jitter, re-clip, and shuffle ground-truth boxes.

    A nonzero false_positive_rate additionally spawns that many spurious
    boxes per frame on average (Poisson), with no source vehicle.
    """
    rng = seeding.rng_for(noise.seed, seeding.DETECTOR)
    out = []
    for vid, box in truth_boxes:
        if noise.miss_prob > 0 and rng.random() < noise.miss_prob:
            continue
        edges = np.array([box.u_min, box.v_min, box.u_max, box.v_max])
        if noise.edge_jitter_sigma > 0:
            edges = edges + rng.normal(0.0, noise.edge_jitter_sigma, size=4)
        u_min = min(max(edges[0], 0.0), float(width))
        v_min = min(max(edges[1], 0.0), float(height))
        u_max = min(max(edges[2], 0.0), float(width))
        v_max = min(max(edges[3], 0.0), float(height))
        if u_max - u_min <= 0 or v_max - v_min <= 0:
            continue
        out.append(Detection(Box2D(u_min, v_min, u_max, v_max), source_id=vid))
    if noise.false_positive_rate > 0:
        for _ in range(int(rng.poisson(noise.false_positive_rate))):
            w = rng.uniform(0.02, 0.3) * width
            h = rng.uniform(0.02, 0.3) * height
            u0 = rng.uniform(0.0, width - w)
            v0 = rng.uniform(0.0, height - h)
            out.append(Detection(Box2D(u0, v0, u0 + w, v0 + h), source_id=None))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


DEPTH_MAGIC = b"DPT1"


def write_depth_map(dm: DepthMap, path):
    """Bit-exact raster format: magic, u32 LE width/height, f32 LE values."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", DEPTH_MAGIC, dm.width, dm.height))
        fh.write(dm.values.astype("<f4").tobytes())


def read_depth_map(path) -> DepthMap:
    with open(path, "rb") as fh:
        magic, width, height = struct.unpack("<4sII", fh.read(12))
        if magic != DEPTH_MAGIC:
            raise ValueError(f"not a depth map file: magic {magic!r}")
        raw = fh.read(4 * width * height)
    values = np.frombuffer(raw, dtype="<f4").astype(float).reshape(height, width)
    return DepthMap(width, height, values)


def write_detections_csv(frames: list[SensorFrame], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "source_id", "u_min", "v_min", "u_max", "v_max"])
        for frame in frames:
            for det in frame.detections:
                b = det.box
                w.writerow([f"{frame.t:.2f}", det.source_id, f"{b.u_min:.3f}",
                            f"{b.v_min:.3f}", f"{b.u_max:.3f}", f"{b.v_max:.3f}"])
