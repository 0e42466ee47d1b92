"""Camera model and 2D box algebra.

Coordinate conventions used throughout the package:

World frame (right-handed):
  - x: along the road, forward
  - y: left (0 at the road's right edge for lane math)
  - z: up

Camera frame (right-handed, standard computer vision):
  - x: right in the image
  - y: down in the image
  - z: forward along the optical axis

Image frame:
  - origin top-left, u right, v down, units pixels
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BehindCamera(Exception):
    """Point is at or behind the camera near plane and cannot be imaged."""


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass(frozen=True)
class CameraPoint:
    x_c: float
    y_c: float
    z_c: float


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float
    depth: float


class CameraExtrinsics:
    """World-to-camera rigid transform: p_cam = R @ p_world + t."""

    def __init__(self, rotation, translation):
        r = np.asarray(rotation, dtype=float).reshape(3, 3)
        t = np.asarray(translation, dtype=float).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation matrix determinant is not +1")
        self.rotation = r
        self.translation = t

    def camera_center(self) -> WorldPoint:
        """World position of the optical center (solves R c + t = 0)."""
        c = -self.rotation.T @ self.translation
        return WorldPoint(c[0], c[1], c[2])

    @classmethod
    def looking_along_road(cls, position: WorldPoint) -> "CameraExtrinsics":
        """Camera at `position` pointing down the +x road axis.

        Camera x = world -y (right), camera y = world -z (down),
        camera z = world +x (forward).
        """
        r = np.array([[0.0, -1.0, 0.0],
                      [0.0, 0.0, -1.0],
                      [1.0, 0.0, 0.0]])
        t = -r @ position.as_array()
        return cls(r, t)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal length in meters, pixel pitch in m/px."""

    f: float
    d_x: float
    d_y: float
    u0: float
    v0: float
    width: int
    height: int
    near_plane: float = 0.5

    def __post_init__(self):
        if self.f <= 0 or self.d_x <= 0 or self.d_y <= 0:
            raise ValueError("focal length and pixel sizes must be positive")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.near_plane <= 0:
            raise ValueError("near_plane must be positive")

    @property
    def fx(self) -> float:
        """Focal length in horizontal pixels."""
        return self.f / self.d_x

    @property
    def fy(self) -> float:
        """Focal length in vertical pixels."""
        return self.f / self.d_y


@dataclass(frozen=True)
class Camera:
    """Extrinsics + intrinsics bundle for one mounted camera."""

    extrinsics: CameraExtrinsics
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel rectangle, u_min <= u_max and v_min <= v_max."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError("box edges out of order")

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))

    def contains(self, u: float, v: float) -> bool:
        """Closed-boundary containment: edges count as inside."""
        return self.u_min <= u <= self.u_max and self.v_min <= v <= self.v_max


@dataclass(frozen=True)
class Cuboid3D:
    """Axis-aligned vehicle body rotated by yaw about the vertical axis."""

    center: WorldPoint
    length: float
    width: float
    height: float
    yaw: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0 or self.height <= 0:
            raise ValueError("cuboid dimensions must be positive")

    def corners(self) -> list[WorldPoint]:
        """The 8 body corners in world coordinates."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw, hh = 0.5 * self.length, 0.5 * self.width, 0.5 * self.height
        out = []
        for dx in (-hl, hl):
            for dy in (-hw, hw):
                for dz in (-hh, hh):
                    out.append(WorldPoint(
                        self.center.x + dx * cy - dy * sy,
                        self.center.y + dx * sy + dy * cy,
                        self.center.z + dz,
                    ))
        return out


def world_to_camera(p: WorldPoint, e: CameraExtrinsics) -> CameraPoint:
    """Apply the rigid world-to-camera transform."""
    v = e.rotation @ p.as_array() + e.translation
    return CameraPoint(v[0], v[1], v[2])


def camera_to_pixel(p: CameraPoint, i: CameraIntrinsics) -> PixelPoint:
    """Perspective-divide projection of a camera-frame point.

    Raises BehindCamera when the point sits at or behind the near plane.
    """
    if p.z_c <= i.near_plane:
        raise BehindCamera(f"z_c={p.z_c:.3f} <= near_plane={i.near_plane:.3f}")
    u = i.u0 + i.fx * (p.x_c / p.z_c)
    v = i.v0 + i.fy * (p.y_c / p.z_c)
    return PixelPoint(u, v, p.z_c)


def project_anchor(p_w: WorldPoint, e: CameraExtrinsics, i: CameraIntrinsics) -> PixelPoint:
    """Project a world point into the image; may land outside the frame."""
    return camera_to_pixel(world_to_camera(p_w, e), i)


def project_cuboid_hull(c: Cuboid3D, e: CameraExtrinsics, i: CameraIntrinsics) -> Box2D:
    """Axis-aligned hull of the 8 projected corners, clipped to the image.

    Raises BehindCamera if any corner is behind the near plane; clipping may
    yield a zero-area box when the body is outside the frustum sideways.
    """
    us, vs = [], []
    for corner in c.corners():
        px = camera_to_pixel(world_to_camera(corner, e), i)
        us.append(px.u)
        vs.append(px.v)
    u_min = min(max(min(us), 0.0), float(i.width))
    u_max = min(max(max(us), 0.0), float(i.width))
    v_min = min(max(min(vs), 0.0), float(i.height))
    v_max = min(max(max(vs), 0.0), float(i.height))
    return Box2D(u_min, v_min, u_max, v_max)


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union; 0 when the union has no area."""
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
