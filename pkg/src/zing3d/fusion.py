"""Lift grounded detections to 3D and merge them into the global graph.

Association rule: an incoming instance merges into the nearest existing node
whose label matches under the configured rule and whose centroid lies within
the association distance; otherwise it becomes a new node. Merges fold
geometry as a point_count-weighted mean, so a node's centroid always equals
the weighted mean of its contributing instances.

Re-observations are detected through per-node (chunk_id, frame_id, local_id)
provenance: folding the same observation twice is a geometric no-op, which
makes chunk ingestion idempotent down to the serialized bytes.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from .dataset import FrameChunk
from .errors import DomainError, EmptyProjection
from .geometry import (
    Aabb,
    Point3,
    backproject_mask,
    camera_to_world,
    centroid_and_aabb,
    pairwise_distance,
)
from .model import (
    Detection2D,
    ObjectNode3D,
    PosedFrame,
    RelationEdge,
    SceneGraph2D,
    SceneGraph3D,
    normalize_label,
    tokenize,
)
from .perception import (
    DEFAULT_CHUNK_SIZE,
    DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_EXCLUSIONS,
    BackendDescriptor,
    ChunkRequest,
    filter_objects,
    ground_objects,
    request_scene_graph_2d,
)

log = logging.getLogger(__name__)

TOKEN_OVERLAP_THRESHOLD = 0.5


@dataclass(frozen=True)
class ObjectInstance3D:
    """One detection lifted into the world frame."""

    label: str
    description: str
    category: str
    room_type: str
    centroid: Point3
    point_count: int
    aabb: Aabb
    frame_id: int
    chunk_id: int
    local_id: int


@dataclass(frozen=True)
class FusionConfig:
    """Knobs for instance-to-node association."""

    association_distance: float = 0.5
    label_match: Literal["exact-normalized", "token-overlap"] = "exact-normalized"
    min_points: int = 20

    def __post_init__(self):
        if self.association_distance <= 0:
            raise DomainError("association_distance must be positive")
        if self.min_points < 1:
            raise DomainError("min_points must be at least 1")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a reproducible ingestion run needs."""

    fusion: FusionConfig = field(default_factory=FusionConfig)
    exclusions: tuple[str, ...] = DEFAULT_EXCLUSIONS
    grounding_confidence: float = DEFAULT_CONFIDENCE_THRESHOLD
    chunk_size: int = DEFAULT_CHUNK_SIZE


@dataclass
class MergeReport:
    """Node ids touched by associate_and_merge, in instance order."""

    merged: list[int] = field(default_factory=list)
    created: list[int] = field(default_factory=list)
    id_map: dict[int, int] = field(default_factory=dict)


@dataclass
class RelationReport:
    applied: int = 0
    discarded: int = 0


@dataclass
class ChunkReport:
    """Counts and stage timings for one ingested chunk (JSON-lines friendly)."""

    chunk_id: int
    objects_seen: int = 0
    objects_filtered: int = 0
    detections_grounded: int = 0
    instances_lifted: int = 0
    detections_dropped: int = 0
    nodes_merged: int = 0
    nodes_created: int = 0
    relations_applied: int = 0
    relations_discarded: int = 0
    edges_updated: int = 0
    timings_s: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def labels_match(a: str, b: str, cfg: FusionConfig) -> bool:
    if cfg.label_match == "exact-normalized":
        return normalize_label(a) == normalize_label(b)
    ta, tb = tokenize(a), tokenize(b)
    if not ta or not tb:
        return False
    return len(ta & tb) / len(ta | tb) >= TOKEN_OVERLAP_THRESHOLD


def lift_detections(
    detections: list[Detection2D],
    frame: PosedFrame,
    cfg: FusionConfig | None = None,
    *,
    chunk_id: int = 0,
    z_flip: bool = False,
) -> list[ObjectInstance3D]:
    """Back-project masked detections through the frame pose into world space.

    Detections with no valid depth or fewer than cfg.min_points surviving
    points are dropped (and logged), not errored.
    """
    cfg = cfg or FusionConfig()
    instances: list[ObjectInstance3D] = []
    for det in detections:
        if det.mask is None:
            raise DomainError(f"detection {det.label!r} in frame {frame.frame_id} has no mask")
        try:
            batch = backproject_mask(det.mask, frame.depth, frame.intrinsics)
        except EmptyProjection:
            log.info("dropping %r in frame %d: no valid depth", det.label, frame.frame_id)
            continue
        if len(batch) < cfg.min_points:
            log.info(
                "dropping %r in frame %d: %d points < min_points %d",
                det.label,
                frame.frame_id,
                len(batch),
                cfg.min_points,
            )
            continue
        if z_flip:
            flipped = batch.points.copy()
            flipped[:, 2] *= -1.0
            batch = type(batch)(flipped, "camera")
        world = camera_to_world(batch, frame.pose)
        centroid, aabb = centroid_and_aabb(world)
        instances.append(
            ObjectInstance3D(
                label=det.label,
                description=det.description,
                category=det.category,
                room_type=det.room_type,
                centroid=centroid,
                point_count=len(world),
                aabb=aabb,
                frame_id=frame.frame_id,
                chunk_id=chunk_id,
                local_id=det.local_id,
            )
        )
    return instances


def _fold_instance(node: ObjectNode3D, inst: ObjectInstance3D) -> None:
    """Merge one instance's geometry and semantics into an existing node."""
    total = node.point_count + inst.point_count
    blended = (
        node.centroid.as_array() * node.point_count + inst.centroid.as_array() * inst.point_count
    ) / total
    node.aabb = node.aabb.union(inst.aabb)
    lo = node.aabb.min_corner.as_array()
    hi = node.aabb.max_corner.as_array()
    node.centroid = Point3.from_array(np.clip(blended, lo, hi))
    node.point_count = total
    node.observed_in.add(inst.frame_id)
    node.last_updated_chunk = inst.chunk_id
    # Later observations tend to be closer to the object.
    if inst.room_type:
        node.room_type = inst.room_type
    if inst.description and not node.description:
        node.description = inst.description
    if inst.category and not node.category:
        node.category = inst.category


def associate_and_merge(
    graph: SceneGraph3D, instances: list[ObjectInstance3D], cfg: FusionConfig | None = None
) -> MergeReport:
    """Merge each instance into its nearest label-matching node within the
    association distance, or create a fresh node.

    Ties go to the lowest node_id. Every instance lands somewhere, so
    len(merged) + len(created) == len(instances).
    """
    cfg = cfg or FusionConfig()
    report = MergeReport()
    # local_id -> {node_id: instance count} for id_map resolution
    landing: dict[int, dict[int, int]] = {}

    for inst in instances:
        best: Optional[tuple[float, int]] = None
        for node_id in sorted(graph.nodes):
            node = graph.nodes[node_id]
            if not labels_match(node.label, inst.label, cfg):
                continue
            dist = pairwise_distance(node.centroid, inst.centroid)
            if dist >= cfg.association_distance:
                continue
            if best is None or dist < best[0]:
                best = (dist, node_id)

        provenance = (inst.chunk_id, inst.frame_id, inst.local_id)
        if best is not None:
            node = graph.nodes[best[1]]
            if provenance not in node.contributions:
                _fold_instance(node, inst)
                node.contributions.add(provenance)
            report.merged.append(node.node_id)
            target = node.node_id
        else:
            node_id = graph.allocate_node_id()
            graph.nodes[node_id] = ObjectNode3D(
                node_id=node_id,
                label=inst.label,
                description=inst.description,
                category=inst.category,
                room_type=inst.room_type,
                centroid=inst.centroid,
                point_count=inst.point_count,
                aabb=inst.aabb,
                observed_in={inst.frame_id},
                created_chunk=inst.chunk_id,
                last_updated_chunk=inst.chunk_id,
                contributions={provenance},
            )
            report.created.append(node_id)
            target = node_id

        if inst.local_id >= 0:
            landing.setdefault(inst.local_id, {})[target] = (
                landing.get(inst.local_id, {}).get(target, 0) + 1
            )

    for local_id, targets in landing.items():
        report.id_map[local_id] = min(targets, key=lambda nid: (-targets[nid], nid))
    return report


def apply_relations(
    graph: SceneGraph3D, sg2d: SceneGraph2D, id_map: dict[int, int]
) -> RelationReport:
    """Carry surviving 2D relations into the graph as directed edges.

    Relations whose endpoints were dropped during lifting (or collapsed into
    one node) are discarded and counted. Re-applying an existing
    (src, dst, predicate) refreshes its distance instead of duplicating it.
    """
    report = RelationReport()
    for subject, predicate, obj in sg2d.relations:
        src = id_map.get(subject)
        dst = id_map.get(obj)
        if src is None or dst is None or src == dst:
            report.discarded += 1
            continue
        distance = pairwise_distance(graph.nodes[src].centroid, graph.nodes[dst].centroid)
        edge = graph.find_edge(src, dst, predicate)
        if edge is None:
            graph.edges.append(
                RelationEdge(src=src, dst=dst, predicate=predicate, distance_m=distance)
            )
        else:
            edge.distance_m = distance
        report.applied += 1
    return report


def recompute_edge_distances(graph: SceneGraph3D) -> int:
    """Refresh every edge's distance from current centroids; count changes > 1e-9."""
    updated = 0
    for edge in graph.edges:
        distance = pairwise_distance(graph.nodes[edge.src].centroid, graph.nodes[edge.dst].centroid)
        if abs(distance - edge.distance_m) > 1e-9:
            updated += 1
        edge.distance_m = distance
    return updated


def _join_detections(sg2d: SceneGraph2D, grounded: list[Detection2D]) -> list[Detection2D]:
    """Attach chunk-level identity and semantics to raw grounding detections.

    A detection inherits the local_id of the unique 2D object sharing its
    normalized label; with several same-label objects the identity is
    ambiguous and the detection keeps local_id -1 (it still fuses, but takes
    no part in relations).
    """
    by_label: dict[str, list[Detection2D]] = {}
    for obj in sg2d.objects:
        by_label.setdefault(normalize_label(obj.label), []).append(obj)

    joined: list[Detection2D] = []
    for det in grounded:
        candidates = by_label.get(normalize_label(det.label), [])
        if not candidates:
            continue  # grounding returned a label the scene graph never declared
        source = candidates[0]
        joined.append(
            Detection2D(
                local_id=source.local_id if len(candidates) == 1 else -1,
                label=source.label,
                description=source.description,
                category=source.category,
                room_type=source.room_type,
                bbox=det.bbox,
                frame_id=det.frame_id,
                mask=det.mask,
            )
        )
    return joined


def _commit(graph: SceneGraph3D, staged: SceneGraph3D) -> None:
    graph.nodes = staged.nodes
    graph.edges = staged.edges
    graph.ingested_chunks = staged.ingested_chunks
    graph.id_counter = staged.id_counter


def ingest_chunk(
    graph: SceneGraph3D,
    chunk: FrameChunk,
    backend: BackendDescriptor,
    config: PipelineConfig | None = None,
    *,
    z_flip: bool = False,
) -> ChunkReport:
    """Run the full per-chunk pipeline and merge the results into the graph.

    Stages: scene-graph request, object filtering, per-frame grounding,
    lifting, association/merge, relation application, edge refresh. The
    pipeline mutates a staged copy and commits only on success, so a failure
    at any stage leaves the graph untouched.
    """
    if not chunk.frames:
        raise DomainError(f"chunk {chunk.chunk_id} has no frames")
    config = config or PipelineConfig()
    report = ChunkReport(chunk_id=chunk.chunk_id)
    staged = copy.deepcopy(graph)

    t0 = time.perf_counter()
    request = ChunkRequest(
        chunk_id=chunk.chunk_id,
        frames=[(f.frame_id, f.rgb_ref, f.pose) for f in chunk.frames],
        profile="scene_graph",
    )
    sg2d = request_scene_graph_2d(request, backend)
    report.timings_s["scene_graph"] = time.perf_counter() - t0
    report.objects_seen = len(sg2d.objects)

    t0 = time.perf_counter()
    filtered = filter_objects(sg2d, config.exclusions)
    report.timings_s["filter"] = time.perf_counter() - t0
    report.objects_filtered = report.objects_seen - len(filtered.objects)

    labels = sorted({obj.label for obj in filtered.objects})
    joined: list[tuple[PosedFrame, list[Detection2D]]] = []
    t0 = time.perf_counter()
    if labels:
        for frame in chunk.frames:
            grounded = ground_objects(labels, frame, backend, config.grounding_confidence)
            frame_dets = _join_detections(filtered, grounded)
            report.detections_grounded += len(frame_dets)
            joined.append((frame, frame_dets))
    report.timings_s["grounding"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    instances: list[ObjectInstance3D] = []
    for frame, frame_dets in joined:
        instances.extend(
            lift_detections(
                frame_dets, frame, config.fusion, chunk_id=chunk.chunk_id, z_flip=z_flip
            )
        )
    report.timings_s["lift"] = time.perf_counter() - t0
    report.instances_lifted = len(instances)
    report.detections_dropped = report.detections_grounded - report.instances_lifted

    t0 = time.perf_counter()
    merge = associate_and_merge(staged, instances, config.fusion)
    report.timings_s["merge"] = time.perf_counter() - t0
    report.nodes_merged = len(merge.merged)
    report.nodes_created = len(merge.created)

    t0 = time.perf_counter()
    relations = apply_relations(staged, filtered, merge.id_map)
    report.relations_applied = relations.applied
    report.relations_discarded = relations.discarded
    report.edges_updated = recompute_edge_distances(staged)
    report.timings_s["relations"] = time.perf_counter() - t0

    staged.ingested_chunks.add(chunk.chunk_id)
    _commit(graph, staged)
    return report
