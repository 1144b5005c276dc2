"""Deterministic synthetic fixture scene: box objects, exact masks, noiseless depth.

Builds a complete test environment under one directory:

    scene/          on-disk trajectory in the documented dataset layout
    fixtures/       recorded perception responses for the replay backend
    annotations.json  ground truth for the evaluation harness

Five cube objects sit on the z = 0 plane, each observed by a six-pose orbit
(three exactly opposite camera pairs at the object's center height). Side
faces of a centered cube are sampled symmetrically by opposite views, so the
fused centroid converges to the box center to well under a centimeter, which
gives the end-to-end suite an analytically known target. Depth maps come
from a slab-method raycaster (range along the optical axis, millimeter
quantization); masks are the exact nearest-hit pixel sets.

The fixtures also exercise the unhappy paths: wall/floor objects that the
exclusion filter must drop, and a declared object that grounding never finds
whose relation must be discarded.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, intrinsics_from_fov, rotation_matrix
from .perception import rle_encode

WIDTH = 160
HEIGHT = 120
HFOV_DEG = 90.0
DEPTH_SCALE = 0.001  # millimeters on disk
ORBIT_RADIUS = 1.2
POSES_PER_OBJECT = 6
CHUNK_SIZE = 10
CONFIDENCE = 0.95
ROOM = "living room"


@dataclass(frozen=True)
class BoxObject:
    label: str
    description: str
    category: str
    center: tuple[float, float, float]
    size: float = 0.3  # cube edge length

    @property
    def half(self) -> float:
        return self.size / 2.0


OBJECTS: tuple[BoxObject, ...] = (
    BoxObject("sofa", "three-seat red fabric sofa", "furniture", (0.0, 0.0, 0.0)),
    BoxObject("coffee table", "round wooden coffee table", "furniture", (3.2, 0.4, 0.0)),
    BoxObject("armchair", "green velvet armchair", "furniture", (-3.4, 0.6, 0.0)),
    BoxObject("floor lamp", "brass floor lamp with shade", "lighting", (0.2, 3.6, 0.0)),
    BoxObject("potted plant", "leafy potted monstera", "decor", (3.4, 3.8, 0.0)),
)

# (synonyms, ) per label for the annotation file
SYNONYMS: dict[str, tuple[str, ...]] = {
    "sofa": ("couch", "settee"),
    "coffee table": ("table",),
    "armchair": ("chair",),
    "floor lamp": ("lamp",),
    "potted plant": ("plant", "houseplant"),
}

# Relations the replay scene graphs declare between real objects, expressed
# as (subject label, predicate, object label); these are also the
# annotation-side acceptable relations.
TRUE_RELATIONS: tuple[tuple[str, str, str], ...] = (
    ("sofa", "is near", "coffee table"),
    ("armchair", "is to the right of", "coffee table"),
    ("floor lamp", "is next to", "armchair"),
    ("potted plant", "is behind", "floor lamp"),
)


@dataclass(frozen=True)
class SyntheticScene:
    root: Path
    scene_dir: Path
    fixture_dir: Path
    annotations_path: Path
    objects: tuple[BoxObject, ...]
    frame_count: int
    chunk_size: int

    @property
    def expected_nodes(self) -> int:
        return len(self.objects)

    @property
    def expected_edges(self) -> int:
        return len(TRUE_RELATIONS)

    def center_of(self, label: str) -> tuple[float, float, float]:
        for obj in self.objects:
            if obj.label == label:
                return obj.center
        raise KeyError(label)


def _orbit_poses(center: tuple[float, float, float]) -> list[tuple[np.ndarray, np.ndarray, list[float]]]:
    """Six (position, rotation, quaternion) poses: three exact opposite pairs.

    The opposite member of each pair is built by negating the first member's
    offset and quaternion components, keeping the pair bit-for-bit symmetric.
    """
    cx, cy, cz = center
    poses = []
    for theta_deg in (10.0, 70.0, 130.0):
        theta = math.radians(theta_deg)
        offset = np.array([math.cos(theta), math.sin(theta), 0.0])
        yaw_half = (theta + math.pi / 2.0) / 2.0
        qw, qz = math.cos(yaw_half), math.sin(yaw_half)
        for pos_offset, quat in (
            (offset, [qw, 0.0, 0.0, qz]),
            (-offset, [-qz, 0.0, 0.0, qw]),
        ):
            position = np.array([cx, cy, cz]) + ORBIT_RADIUS * pos_offset
            rot = rotation_matrix(tuple(quat))
            poses.append((position, rot, quat))
    return poses


def _render(
    cam_pos: np.ndarray, rot: np.ndarray, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Raycast all boxes; returns (depth along optical axis, nearest box index).

    Pixels that hit nothing carry depth 0 and index -1.
    """
    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, np.ones_like(us, dtype=np.float64), (vs - intr.cy) / intr.fy],
        axis=-1,
    )
    dirs_world = dirs_cam @ rot.T
    best_t = np.full((intr.height, intr.width), np.inf)
    best_idx = np.full((intr.height, intr.width), -1, dtype=np.int32)
    for idx, box in enumerate(OBJECTS):
        lo = np.asarray(box.center) - box.half
        hi = np.asarray(box.center) + box.half
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - cam_pos) / dirs_world
            t2 = (hi - cam_pos) / dirs_world
        tmin = np.minimum(t1, t2).max(axis=-1)
        tmax = np.maximum(t1, t2).min(axis=-1)
        hit = (tmax >= tmin) & (tmin > 0)
        closer = hit & (tmin < best_t)
        best_t[closer] = tmin[closer]
        best_idx[closer] = idx
    depth = np.where(best_idx >= 0, best_t, 0.0)
    return depth, best_idx


def _chunk_fixture_spec() -> list[dict]:
    """Which objects and relations each chunk's scene-graph response declares.

    'grounded' lists labels the grounding fixture actually masks; the
    doormat is declared but never grounded, so its relation must be
    discarded downstream. Walls and floors exist to be filtered out.
    """
    return [
        {
            "objects": [
                {"local_id": 1, "label": "sofa", "frame_id": 0},
                {"local_id": 2, "label": "coffee table", "frame_id": 6},
                {"local_id": 3, "label": "white wall", "frame_id": 0},
                {"local_id": 4, "label": "wooden floor", "frame_id": 0},
            ],
            "relations": [
                {"subject": 1, "predicate": "is near", "object": 2},
                {"subject": 1, "predicate": "is on", "object": 4},
                {"subject": 3, "predicate": "is behind", "object": 1},
            ],
        },
        {
            "objects": [
                {"local_id": 1, "label": "coffee table", "frame_id": 10},
                {"local_id": 2, "label": "armchair", "frame_id": 12},
                {"local_id": 3, "label": "floor lamp", "frame_id": 18},
                {"local_id": 4, "label": "white wall", "frame_id": 10},
                {"local_id": 5, "label": "doormat", "frame_id": 10},
            ],
            "relations": [
                {"subject": 2, "predicate": "is to the right of", "object": 1},
                {"subject": 3, "predicate": "is next to", "object": 2},
                {"subject": 4, "predicate": "is behind", "object": 2},
                {"subject": 5, "predicate": "is near", "object": 1},
            ],
        },
        {
            "objects": [
                {"local_id": 1, "label": "floor lamp", "frame_id": 20},
                {"local_id": 2, "label": "potted plant", "frame_id": 24},
            ],
            "relations": [
                {"subject": 2, "predicate": "is behind", "object": 1},
            ],
        },
    ]


def _dump(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def generate_scene(root: Path | str) -> SyntheticScene:
    """Write the full synthetic scene, fixtures, and annotations under root."""
    root = Path(root)
    scene_dir = root / "scene"
    fixture_dir = root / "fixtures"
    (scene_dir / "rgb").mkdir(parents=True, exist_ok=True)
    (scene_dir / "depth").mkdir(parents=True, exist_ok=True)
    fixture_dir.mkdir(parents=True, exist_ok=True)

    intr = intrinsics_from_fov(WIDTH, HEIGHT, HFOV_DEG)
    frame_count = len(OBJECTS) * POSES_PER_OBJECT

    pose_lines: list[str] = []
    # chunk_id -> list of grounding detection dicts
    grounding: dict[int, list[dict]] = {}
    frame_id = 0
    rgb = Image.new("RGB", (WIDTH, HEIGHT), (96, 96, 96))
    for target_idx, box in enumerate(OBJECTS):
        for position, rot, quat in _orbit_poses(box.center):
            depth, owner = _render(position, rot, intr)
            mask = owner == target_idx
            if not mask.any():
                raise RuntimeError(f"{box.label}: frame {frame_id} sees no target pixels")
            # the orbit layout must keep the target unoccluded
            lone = _render_single(position, rot, intr, box)
            if not np.array_equal(mask, lone):
                raise RuntimeError(f"{box.label}: frame {frame_id} target partially occluded")

            stored = np.round(depth / DEPTH_SCALE).astype(np.uint16)
            Image.fromarray(stored, mode="I;16").save(scene_dir / f"depth/{frame_id:06d}.png")
            rgb.save(scene_dir / f"rgb/{frame_id:06d}.png")
            pose_lines.append(
                json.dumps(
                    {"frame_id": frame_id, "t": [float(v) for v in position], "q": quat}
                )
            )

            vs, us = np.nonzero(mask)
            chunk_id = frame_id // CHUNK_SIZE
            grounding.setdefault(chunk_id, []).append(
                {
                    "label": box.label,
                    "frame_id": frame_id,
                    "bbox": [int(us.min()), int(vs.min()), int(us.max()), int(vs.max())],
                    "mask_rle": rle_encode(mask),
                    "confidence": CONFIDENCE,
                }
            )
            frame_id += 1

    (scene_dir / "poses.jsonl").write_text("\n".join(pose_lines) + "\n", encoding="utf-8")
    _dump(
        scene_dir / "manifest.json",
        {
            "schema_version": 1,
            "scene_id": "synthetic_room",
            "frame_count": frame_count,
            "width": WIDTH,
            "height": HEIGHT,
            "intrinsics": {"hfov_deg": HFOV_DEG},
            "depth_scale": DEPTH_SCALE,
            "z_flip": False,
        },
    )

    descriptions = {obj.label: obj for obj in OBJECTS}
    for chunk_id, spec in enumerate(_chunk_fixture_spec()):
        objects = []
        for raw in spec["objects"]:
            box = descriptions.get(raw["label"])
            objects.append(
                {
                    "local_id": raw["local_id"],
                    "label": raw["label"],
                    "description": box.description if box else raw["label"],
                    "category": box.category if box else "structure",
                    "room_type": ROOM,
                    "frame_id": raw["frame_id"],
                }
            )
        _dump(
            fixture_dir / f"chunk_{chunk_id}.json",
            {
                "schema_version": 1,
                "chunk_id": chunk_id,
                "objects": objects,
                "relations": spec["relations"],
            },
        )
        _dump(
            fixture_dir / f"ground_{chunk_id}.json",
            {"schema_version": 1, "detections": grounding.get(chunk_id, [])},
        )

    annotations_path = root / "annotations.json"
    refs = {obj.label: f"gt_{i}" for i, obj in enumerate(OBJECTS)}
    _dump(
        annotations_path,
        {
            "schema_version": 1,
            "objects": [
                {
                    "ref": refs[obj.label],
                    "label": obj.label,
                    "synonyms": list(SYNONYMS[obj.label]),
                    "centroid": list(obj.center),
                    "room_type": ROOM,
                }
                for obj in OBJECTS
            ],
            "relations": [
                {"subject": refs[s], "predicates": [p], "object": refs[o]}
                for s, p, o in TRUE_RELATIONS
            ],
        },
    )

    return SyntheticScene(
        root=root,
        scene_dir=scene_dir,
        fixture_dir=fixture_dir,
        annotations_path=annotations_path,
        objects=OBJECTS,
        frame_count=frame_count,
        chunk_size=CHUNK_SIZE,
    )


def _render_single(
    cam_pos: np.ndarray, rot: np.ndarray, intr: CameraIntrinsics, box: BoxObject
) -> np.ndarray:
    """Hit mask for one box alone, used to assert the target is unoccluded."""
    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs_cam = np.stack(
        [(us - intr.cx) / intr.fx, np.ones_like(us, dtype=np.float64), (vs - intr.cy) / intr.fy],
        axis=-1,
    )
    dirs_world = dirs_cam @ rot.T
    lo = np.asarray(box.center) - box.half
    hi = np.asarray(box.center) + box.half
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - cam_pos) / dirs_world
        t2 = (hi - cam_pos) / dirs_world
    tmin = np.minimum(t1, t2).max(axis=-1)
    tmax = np.maximum(t1, t2).min(axis=-1)
    return (tmax >= tmin) & (tmin > 0)
