"""Domain types for the incremental 3D scene graph and graph validation."""

from __future__ import annotations

import math
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .geometry import Aabb, CameraIntrinsics, Point3, Pose, pairwise_distance, quat_norm_error

SCHEMA_VERSION = 1

POSE_NORM_TOLERANCE = 1e-9
EDGE_DISTANCE_TOLERANCE = 1e-6

_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def normalize_text(s: str) -> str:
    """NFC-normalize and trim surrounding whitespace (storage form)."""
    return unicodedata.normalize("NFC", s).strip()


def normalize_label(s: str) -> str:
    """Matching form of a label: NFC, casefolded, whitespace collapsed."""
    return " ".join(unicodedata.normalize("NFC", s).casefold().split())


def tokenize(s: str) -> set[str]:
    """Lowercase alphanumeric tokens of a phrase."""
    return {t for t in _TOKEN_RE.split(normalize_label(s)) if t}


@dataclass(frozen=True)
class PosedFrame:
    """One RGB-D observation: depth array, camera pose, and intrinsics.

    rgb_ref is an opaque resource reference (a file path in the on-disk
    layout); the engine never decodes RGB pixels itself.
    """

    frame_id: int
    rgb_ref: str
    depth: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics
    timestamp: Optional[float] = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        expected = (self.intrinsics.height, self.intrinsics.width)
        if depth.shape != expected:
            raise DomainError(
                f"frame {self.frame_id}: depth shape {depth.shape} != intrinsics {expected}"
            )
        finite = depth[np.isfinite(depth)]
        if finite.size and float(finite.min()) < 0.0:
            raise DomainError(f"frame {self.frame_id}: negative depth values present")
        if quat_norm_error(self.pose.orientation) > POSE_NORM_TOLERANCE:
            raise DomainError(
                f"frame {self.frame_id}: pose quaternion norm drifts beyond {POSE_NORM_TOLERANCE}"
            )
        object.__setattr__(self, "depth", depth)


@dataclass
class Detection2D:
    """A grounded 2D detection: open-vocabulary label plus bbox and mask."""

    local_id: int
    label: str
    description: str
    category: str
    room_type: str
    bbox: tuple[int, int, int, int]
    frame_id: int
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        u_min, v_min, u_max, v_max = self.bbox
        if not (0 <= u_min <= u_max and 0 <= v_min <= v_max):
            raise DomainError(f"detection {self.local_id}: malformed bbox {self.bbox}")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=bool)
            h, w = mask.shape
            if u_max >= w or v_max >= h:
                raise DomainError(
                    f"detection {self.local_id}: bbox {self.bbox} exceeds mask {w}x{h}"
                )
            vs, us = np.nonzero(mask)
            if us.size and (
                us.min() < u_min or us.max() > u_max or vs.min() < v_min or vs.max() > v_max
            ):
                raise DomainError(f"detection {self.local_id}: mask pixels outside bbox")
            self.mask = mask

    def mask_population(self) -> int:
        return 0 if self.mask is None else int(self.mask.sum())


@dataclass
class SceneGraph2D:
    """Perception output for one chunk: objects, relations, room context.

    Objects carry no masks until grounding. Relations are
    (subject local_id, predicate, object local_id) triples; response
    validation guarantees endpoints exist and are distinct.
    """

    chunk_id: int
    objects: list[Detection2D] = field(default_factory=list)
    relations: list[tuple[int, str, int]] = field(default_factory=list)
    frame_ids: list[int] = field(default_factory=list)


@dataclass
class ObjectNode3D:
    """A fused world-frame object instance.

    contributions records (chunk_id, frame_id, local_id) provenance for every
    observation folded into the node, which makes re-ingesting a chunk a
    geometric no-op.
    """

    node_id: int
    label: str
    description: str
    category: str
    room_type: str
    centroid: Point3
    point_count: int
    aabb: Aabb
    observed_in: set[int] = field(default_factory=set)
    created_chunk: int = 0
    last_updated_chunk: int = 0
    contributions: set[tuple[int, int, int]] = field(default_factory=set)


@dataclass
class RelationEdge:
    """Directed open-vocabulary predicate plus metric centroid distance."""

    src: int
    dst: int
    predicate: str
    distance_m: float


@dataclass
class SceneGraph3D:
    """The global incremental graph under a single-writer contract."""

    scene_id: str
    nodes: dict[int, ObjectNode3D] = field(default_factory=dict)
    edges: list[RelationEdge] = field(default_factory=list)
    ingested_chunks: set[int] = field(default_factory=set)
    id_counter: int = 0
    schema_version: int = SCHEMA_VERSION

    @property
    def chunks_ingested(self) -> int:
        return len(self.ingested_chunks)

    def allocate_node_id(self) -> int:
        """Hand out the next node id; ids are never reused within a scene."""
        node_id = self.id_counter
        self.id_counter += 1
        return node_id

    def find_edge(self, src: int, dst: int, predicate: str) -> Optional[RelationEdge]:
        for edge in self.edges:
            if edge.src == src and edge.dst == dst and edge.predicate == predicate:
                return edge
        return None


def _finite(p: Point3) -> bool:
    return math.isfinite(p.x) and math.isfinite(p.y) and math.isfinite(p.z)


def validate_graph(graph: SceneGraph3D) -> list[str]:
    """Check every structural invariant; returns one entry per violation.

    Total function: never raises, an empty list means the graph is valid.
    """
    violations: list[str] = []
    for key, node in graph.nodes.items():
        label = f"node {node.node_id} ({node.label!r})"
        if key != node.node_id:
            violations.append(f"{label}: stored under mismatched key {key}")
        if node.point_count < 1:
            violations.append(f"{label}: point_count {node.point_count} < 1")
        if not _finite(node.centroid) or not _finite(node.aabb.min_corner) or not _finite(
            node.aabb.max_corner
        ):
            violations.append(f"{label}: non-finite coordinates")
        elif not node.aabb.contains(node.centroid):
            violations.append(f"{label}: centroid outside aabb")
        if node.node_id >= graph.id_counter:
            violations.append(f"{label}: id not below id_counter {graph.id_counter}")

    seen_triples: set[tuple[int, int, str]] = set()
    for edge in graph.edges:
        label = f"edge {edge.src}->{edge.dst} ({edge.predicate!r})"
        if edge.src == edge.dst:
            violations.append(f"{label}: self-relation")
        missing = [nid for nid in (edge.src, edge.dst) if nid not in graph.nodes]
        for nid in missing:
            violations.append(f"{label}: endpoint node {nid} missing")
        if edge.distance_m < 0:
            violations.append(f"{label}: negative distance {edge.distance_m}")
        triple = (edge.src, edge.dst, edge.predicate)
        if triple in seen_triples:
            violations.append(f"{label}: duplicate (src, dst, predicate) triple")
        seen_triples.add(triple)
        if not missing:
            actual = pairwise_distance(
                graph.nodes[edge.src].centroid, graph.nodes[edge.dst].centroid
            )
            if abs(actual - edge.distance_m) > EDGE_DISTANCE_TOLERANCE:
                violations.append(
                    f"{label}: stale distance {edge.distance_m} vs centroid distance {actual}"
                )
    return violations
