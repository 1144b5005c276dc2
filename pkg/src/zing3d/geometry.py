"""Pinhole back-projection, rigid transforms, and point-set statistics.

Camera-frame convention: X points right along image u, Y is the optical
(depth) axis, and Z follows image v. Because v grows downward in the image,
Z grows downward in the camera frame; the world-frame handedness is fixed by
the dataset pose convention (see the frame-format docs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DomainError, EmptyProjection

FrameTag = Literal["camera", "world"]

QUAT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Point3:
    """A 3D point in meters."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Point3":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by component-wise min/max corners."""

    min_corner: Point3
    max_corner: Point3

    def contains(self, p: Point3, slack: float = 0.0) -> bool:
        return (
            self.min_corner.x - slack <= p.x <= self.max_corner.x + slack
            and self.min_corner.y - slack <= p.y <= self.max_corner.y + slack
            and self.min_corner.z - slack <= p.z <= self.max_corner.z + slack
        )

    def union(self, other: "Aabb") -> "Aabb":
        lo = np.minimum(self.min_corner.as_array(), other.min_corner.as_array())
        hi = np.maximum(self.max_corner.as_array(), other.max_corner.as_array())
        return Aabb(Point3.from_array(lo), Point3.from_array(hi))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx <= self.width) or not (0 <= self.cy <= self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class Pose:
    """World-frame position plus orientation as a (w, x, y, z) unit quaternion.

    Passive value: callers that accept poses into the pipeline enforce the
    unit-norm invariant (PosedFrame at 1e-9, camera_to_world at 1e-6).
    """

    position: Point3
    orientation: tuple[float, float, float, float]

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Point3(0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0))

    def normalized(self) -> "Pose":
        q = np.array(self.orientation, dtype=np.float64)
        norm = float(np.linalg.norm(q))
        if norm == 0.0 or not math.isfinite(norm):
            raise DomainError(f"quaternion {self.orientation} cannot be normalized")
        return Pose(self.position, tuple((q / norm).tolist()))


@dataclass(frozen=True)
class PointBatch:
    """A contiguous (N, 3) float64 point set tagged with its frame."""

    points: np.ndarray
    frame: FrameTag

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DomainError(f"point batch must be (N, 3), got {pts.shape}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def quat_norm_error(q: tuple[float, float, float, float]) -> float:
    """Absolute deviation of the quaternion norm from 1."""
    return abs(float(np.linalg.norm(np.asarray(q, dtype=np.float64))) - 1.0)


def rotation_matrix(q: tuple[float, float, float, float]) -> np.ndarray:
    """3x3 rotation matrix for a unit quaternion (w, x, y, z)."""
    w, x, y, z = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def intrinsics_from_fov(
    width: int, height: int, hfov_deg: float, vfov_deg: float | None = None
) -> CameraIntrinsics:
    """Derive pinhole intrinsics from resolution and horizontal field of view.

    fx = (width / 2) / tan(hfov / 2); fy defaults to fx (square pixels)
    unless vfov_deg overrides it; the principal point is the image center.
    """
    if width < 1 or height < 1:
        raise DomainError(f"image size must be at least 1x1, got {width}x{height}")
    if not (0.0 < hfov_deg < 180.0):
        raise DomainError(f"hfov must lie in (0, 180) degrees, got {hfov_deg}")
    fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
    if vfov_deg is None:
        fy = fx
    else:
        if not (0.0 < vfov_deg < 180.0):
            raise DomainError(f"vfov must lie in (0, 180) degrees, got {vfov_deg}")
        fy = (height / 2.0) / math.tan(math.radians(vfov_deg) / 2.0)
    return CameraIntrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def backproject_pixel(u: float, v: float, d: float, intr: CameraIntrinsics) -> Point3:
    """Map image coordinates (u, v) with depth d into the camera frame.

    X = ((u - cx) / fx) * d, Y = d, Z = ((v - cy) / fy) * d.
    """
    if not math.isfinite(d) or d <= 0.0:
        raise DomainError(f"depth must be finite and positive, got {d}")
    return Point3(
        ((u - intr.cx) / intr.fx) * d,
        d,
        ((v - intr.cy) / intr.fy) * d,
    )


def backproject_mask(mask: np.ndarray, depth: np.ndarray, intr: CameraIntrinsics) -> PointBatch:
    """Back-project every masked pixel with valid depth into the camera frame.

    A pixel contributes iff the mask is set and its depth is finite and
    positive; invalid pixels are skipped, never zero-filled. Raises
    EmptyProjection when nothing survives so the caller can drop the
    detection.
    """
    mask = np.asarray(mask, dtype=bool)
    depth = np.asarray(depth, dtype=np.float64)
    expected = (intr.height, intr.width)
    if mask.shape != expected or depth.shape != expected:
        raise DomainError(
            f"mask {mask.shape} / depth {depth.shape} do not match intrinsics {expected}"
        )
    valid = mask & np.isfinite(depth) & (depth > 0.0)
    if not valid.any():
        raise EmptyProjection("no masked pixel carries valid depth")
    vs, us = np.nonzero(valid)
    d = depth[vs, us]
    pts = np.empty((d.shape[0], 3), dtype=np.float64)
    pts[:, 0] = ((us - intr.cx) / intr.fx) * d
    pts[:, 1] = d
    pts[:, 2] = ((vs - intr.cy) / intr.fy) * d
    return PointBatch(pts, "camera")


def camera_to_world(batch: PointBatch, pose: Pose) -> PointBatch:
    """Apply the rigid transform p -> R(q) p + t, returning a world-tagged batch."""
    if batch.frame != "camera":
        raise DomainError(f"expected a camera-frame batch, got '{batch.frame}'")
    if quat_norm_error(pose.orientation) > QUAT_TOLERANCE:
        raise DomainError(f"quaternion {pose.orientation} is not unit within {QUAT_TOLERANCE}")
    rot = rotation_matrix(pose.normalized().orientation)
    moved = batch.points @ rot.T + pose.position.as_array()
    return PointBatch(moved, "world")


def centroid_and_aabb(batch: PointBatch) -> tuple[Point3, Aabb]:
    """Arithmetic-mean centroid and component-wise min/max box of a batch.

    The mean is clamped into the box: summation rounding can push it one
    ulp past an extreme when many coordinates coincide.
    """
    if len(batch) == 0:
        raise DomainError("cannot summarize an empty point batch")
    lo = batch.points.min(axis=0)
    hi = batch.points.max(axis=0)
    centroid = Point3.from_array(np.clip(batch.points.mean(axis=0), lo, hi))
    return centroid, Aabb(Point3.from_array(lo), Point3.from_array(hi))


def pairwise_distance(a: Point3, b: Point3) -> float:
    """Euclidean distance between two points."""
    return math.dist((a.x, a.y, a.z), (b.x, b.y, b.z))
