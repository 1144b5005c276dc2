"""Posed RGB-D trajectory reader for the documented on-disk layout.

A scene directory holds:

    manifest.json        scene metadata (see SceneManifest)
    rgb/%06d.png         color frames (referenced, never decoded here)
    depth/%06d.png       16-bit depth, depth_scale meters per stored unit
    poses.jsonl          one {"frame_id", "t": [x,y,z], "q": [w,x,y,z]} per line

manifest.json fields: schema_version (1), scene_id, frame_count, width,
height, depth_scale, z_flip, and intrinsics as either {"hfov_deg": ...,
"vfov_deg"?} or explicit {"fx", "fy", "cx", "cy"}. Depth stores range along
the optical axis, not ray length. With z_flip true the camera Z axis is
negated before the pose transform (for datasets whose world frame is
up-positive).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .errors import ManifestError
from .geometry import CameraIntrinsics, Point3, Pose, intrinsics_from_fov, quat_norm_error
from .model import PosedFrame

MANIFEST_NAME = "manifest.json"
RGB_PATTERN = "rgb/{:06d}.png"
DEPTH_PATTERN = "depth/{:06d}.png"
POSES_NAME = "poses.jsonl"

QUAT_DRIFT_LIMIT = 1e-6


@dataclass(frozen=True)
class SceneManifest:
    """Validated description of one scene directory."""

    root: Path
    scene_id: str
    frame_count: int
    intrinsics: CameraIntrinsics
    depth_scale: float
    z_flip: bool = False


@dataclass(frozen=True)
class FrameChunk:
    """A consecutive window of decoded frames, the ingestion unit."""

    chunk_id: int
    frames: tuple[PosedFrame, ...]


def load_manifest(scene_dir: Path | str) -> SceneManifest:
    """Read and validate manifest.json, checking that all frame files exist."""
    root = Path(scene_dir)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"{path} does not exist")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}")
    if raw.get("schema_version") != 1:
        raise ManifestError(f"{path}: unsupported schema_version {raw.get('schema_version')!r}")

    try:
        scene_id = str(raw["scene_id"])
        frame_count = int(raw["frame_count"])
        width = int(raw["width"])
        height = int(raw["height"])
        depth_scale = float(raw["depth_scale"])
        intr_spec = raw["intrinsics"]
    except KeyError as exc:
        raise ManifestError(f"{path}: missing field {exc}")
    if frame_count < 0:
        raise ManifestError(f"{path}: frame_count must be non-negative")
    if depth_scale <= 0:
        raise ManifestError(f"{path}: depth_scale must be positive, got {depth_scale}")

    if "hfov_deg" in intr_spec:
        intrinsics = intrinsics_from_fov(
            width, height, float(intr_spec["hfov_deg"]), intr_spec.get("vfov_deg")
        )
    else:
        try:
            intrinsics = CameraIntrinsics(
                fx=float(intr_spec["fx"]),
                fy=float(intr_spec["fy"]),
                cx=float(intr_spec["cx"]),
                cy=float(intr_spec["cy"]),
                width=width,
                height=height,
            )
        except KeyError as exc:
            raise ManifestError(f"{path}: intrinsics need hfov_deg or fx/fy/cx/cy ({exc})")

    missing = []
    for frame_id in range(frame_count):
        for pattern in (RGB_PATTERN, DEPTH_PATTERN):
            rel = pattern.format(frame_id)
            if not (root / rel).is_file():
                missing.append(rel)
    if not (root / POSES_NAME).is_file():
        missing.append(POSES_NAME)
    if missing:
        raise ManifestError(f"{root}: missing frame files: {', '.join(missing)}")

    return SceneManifest(
        root=root,
        scene_id=scene_id,
        frame_count=frame_count,
        intrinsics=intrinsics,
        depth_scale=depth_scale,
        z_flip=bool(raw.get("z_flip", False)),
    )


def _load_poses(manifest: SceneManifest) -> list[tuple[int, Pose, float | None]]:
    path = manifest.root / POSES_NAME
    entries: list[tuple[int, Pose, float | None]] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frame_id = int(rec["frame_id"])
            t = [float(v) for v in rec["t"]]
            q = [float(v) for v in rec["q"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed pose record: {exc}")
        if len(t) != 3 or len(q) != 4:
            raise ManifestError(f"{path}:{lineno}: pose needs t[3] and q[4]")
        if not all(math.isfinite(v) for v in t + q):
            raise ManifestError(f"{path}:{lineno}: non-finite pose for frame {frame_id}")
        pose = Pose(Point3(*t), tuple(q))
        if quat_norm_error(pose.orientation) > QUAT_DRIFT_LIMIT:
            raise ManifestError(
                f"{path}:{lineno}: frame {frame_id} quaternion norm drifts beyond "
                f"{QUAT_DRIFT_LIMIT}"
            )
        ts = rec.get("ts")
        entries.append((frame_id, pose.normalized(), None if ts is None else float(ts)))
    if len(entries) != manifest.frame_count:
        raise ManifestError(
            f"{path}: {len(entries)} pose records, manifest declares {manifest.frame_count}"
        )
    return entries


def _load_depth(manifest: SceneManifest, frame_id: int) -> np.ndarray:
    path = manifest.root / DEPTH_PATTERN.format(frame_id)
    try:
        with Image.open(path) as img:
            raw = np.asarray(img)
    except Exception as exc:
        raise ManifestError(f"{path}: cannot decode depth image: {exc}")
    if raw.ndim != 2:
        raise ManifestError(f"{path}: depth must be single-channel, got shape {raw.shape}")
    return raw.astype(np.float64) * manifest.depth_scale


def load_frame(manifest: SceneManifest, frame_id: int, pose: Pose, ts: float | None) -> PosedFrame:
    return PosedFrame(
        frame_id=frame_id,
        rgb_ref=str(manifest.root / RGB_PATTERN.format(frame_id)),
        depth=_load_depth(manifest, frame_id),
        pose=pose,
        intrinsics=manifest.intrinsics,
        timestamp=ts,
    )


def stream_chunks(manifest: SceneManifest, chunk_size: int = 10) -> Iterator[FrameChunk]:
    """Yield frames in trajectory order as chunks; the last may be short."""
    if chunk_size < 1:
        raise ManifestError(f"chunk_size must be >= 1, got {chunk_size}")
    poses = _load_poses(manifest)
    for start in range(0, len(poses), chunk_size):
        window = poses[start : start + chunk_size]
        frames = tuple(
            load_frame(manifest, frame_id, pose, ts) for frame_id, pose, ts in window
        )
        yield FrameChunk(chunk_id=start // chunk_size, frames=frames)
