"""Metric harness: precision, duplicates, and valid-object fraction against
annotated ground truth.

Annotations stand in for human judgment at desk scale: each ground-truth
object carries a canonical label, acceptable synonyms, a world centroid, and
a room type; acceptable relations list permitted predicates per ordered
object pair. Label and room comparisons are case-insensitive exact matches
after normalization. Metrics over an empty denominator are reported as
absent (None), printed as "-".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ValidationError
from .geometry import Aabb, Point3, pairwise_distance
from .model import ObjectNode3D, RelationEdge, SceneGraph3D, normalize_label

DEFAULT_MATCH_RADIUS = 0.5  # aligned with the fusion association distance


@dataclass(frozen=True)
class AnnotatedObject:
    ref: str
    label: str
    synonyms: tuple[str, ...]
    centroid: Point3
    room_type: str = ""

    def accepts_label(self, label: str) -> bool:
        wanted = normalize_label(label)
        return wanted == normalize_label(self.label) or any(
            wanted == normalize_label(s) for s in self.synonyms
        )


@dataclass(frozen=True)
class AcceptableRelation:
    subject: str
    predicates: frozenset[str]
    object: str


@dataclass(frozen=True)
class AnnotationSet:
    objects: tuple[AnnotatedObject, ...]
    relations: tuple[AcceptableRelation, ...] = ()

    def __post_init__(self):
        refs = set()
        for obj in self.objects:
            if obj.ref in refs:
                raise ValidationError(f"annotation ref {obj.ref!r} is not unique")
            refs.add(obj.ref)
            if not obj.synonyms:
                raise ValidationError(f"annotation {obj.ref!r}: synonym list is empty")
            for v in (obj.centroid.x, obj.centroid.y, obj.centroid.z):
                if not math.isfinite(v):
                    raise ValidationError(f"annotation {obj.ref!r}: non-finite centroid")
        for rel in self.relations:
            for end in (rel.subject, rel.object):
                if end not in refs:
                    raise ValidationError(f"relation references unknown annotation {end!r}")


def load_annotations(path: Path | str) -> AnnotationSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}")
    if doc.get("schema_version") != 1:
        raise ValidationError(f"{path}: unsupported annotation schema_version")
    try:
        objects = tuple(
            AnnotatedObject(
                ref=str(o["ref"]),
                label=str(o["label"]),
                synonyms=tuple(str(s) for s in o["synonyms"]),
                centroid=Point3(*(float(v) for v in o["centroid"])),
                room_type=str(o.get("room_type", "")),
            )
            for o in doc["objects"]
        )
        relations = tuple(
            AcceptableRelation(
                subject=str(r["subject"]),
                predicates=frozenset(str(p) for p in r["predicates"]),
                object=str(r["object"]),
            )
            for r in doc.get("relations", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed annotation document: {exc!r}")
    return AnnotationSet(objects=objects, relations=relations)


@dataclass
class NodeMatching:
    """Result of greedy nearest-centroid matching within the radius."""

    matches: dict[int, int] = field(default_factory=dict)  # node_id -> annotation index
    duplicates: list[int] = field(default_factory=list)
    unmatched: list[int] = field(default_factory=list)


def match_nodes(
    graph: SceneGraph3D, annotations: AnnotationSet, match_radius: float = DEFAULT_MATCH_RADIUS
) -> NodeMatching:
    """Greedily pair nodes with annotations by ascending centroid distance.

    Each annotation is claimed at most once. A leftover node whose only
    in-radius annotations are already claimed is a duplicate candidate; a
    node with no annotation in range at all is unmatched.
    """
    if match_radius <= 0:
        raise ValidationError("match_radius must be positive")
    pairs = []
    for node in graph.nodes.values():
        for idx, ann in enumerate(annotations.objects):
            d = pairwise_distance(node.centroid, ann.centroid)
            if d <= match_radius:
                pairs.append((d, node.node_id, idx))
    pairs.sort()

    matching = NodeMatching()
    claimed: set[int] = set()
    near_anything: set[int] = set()
    for d, node_id, idx in pairs:
        near_anything.add(node_id)
        if node_id in matching.matches or idx in claimed:
            continue
        matching.matches[node_id] = idx
        claimed.add(idx)
    for node_id in sorted(graph.nodes):
        if node_id in matching.matches:
            continue
        if node_id in near_anything:
            matching.duplicates.append(node_id)
        else:
            matching.unmatched.append(node_id)
    return matching


@dataclass
class EvalReport:
    node_precision: Optional[float]
    room_precision: Optional[float]
    edge_precision: Optional[float]
    duplicates: int
    valid_object_fraction: Optional[float]
    stage_timings_s: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "node_precision": self.node_precision,
            "room_precision": self.room_precision,
            "edge_precision": self.edge_precision,
            "duplicates": self.duplicates,
            "valid_object_fraction": self.valid_object_fraction,
            "stage_timings_s": dict(self.stage_timings_s),
        }


def compute_metrics(
    graph: SceneGraph3D,
    annotations: AnnotationSet,
    matching: NodeMatching,
    stage_timings_s: dict[str, float] | None = None,
) -> EvalReport:
    """Score the graph against annotations given a node matching.

    node_precision counts matched nodes whose label is an accepted synonym,
    over all graph nodes; room_precision is over matched nodes whose
    annotation declares a room; edge_precision accepts an edge when its
    matched endpoints and predicate appear in the acceptable relation set.
    """
    total_nodes = len(graph.nodes)

    correct_labels = 0
    room_total = 0
    room_correct = 0
    for node_id, idx in matching.matches.items():
        node = graph.nodes[node_id]
        ann = annotations.objects[idx]
        if ann.accepts_label(node.label):
            correct_labels += 1
        if ann.room_type:
            room_total += 1
            if normalize_label(node.room_type) == normalize_label(ann.room_type):
                room_correct += 1

    acceptable: dict[tuple[str, str], set[str]] = {}
    for rel in annotations.relations:
        acceptable.setdefault((rel.subject, rel.object), set()).update(
            normalize_label(p) for p in rel.predicates
        )
    correct_edges = 0
    for edge in graph.edges:
        src_idx = matching.matches.get(edge.src)
        dst_idx = matching.matches.get(edge.dst)
        if src_idx is None or dst_idx is None:
            continue
        key = (annotations.objects[src_idx].ref, annotations.objects[dst_idx].ref)
        if normalize_label(edge.predicate) in acceptable.get(key, set()):
            correct_edges += 1

    return EvalReport(
        node_precision=correct_labels / total_nodes if total_nodes else None,
        room_precision=room_correct / room_total if room_total else None,
        edge_precision=correct_edges / len(graph.edges) if graph.edges else None,
        duplicates=len(matching.duplicates),
        valid_object_fraction=len(matching.matches) / total_nodes if total_nodes else None,
        stage_timings_s=stage_timings_s or {},
    )


def evaluate(
    graph: SceneGraph3D,
    annotations: AnnotationSet,
    match_radius: float = DEFAULT_MATCH_RADIUS,
    stage_timings_s: dict[str, float] | None = None,
) -> EvalReport:
    return compute_metrics(
        graph, annotations, match_nodes(graph, annotations, match_radius), stage_timings_s
    )


def graph_from_annotations(annotations: AnnotationSet, scene_id: str = "annotations") -> SceneGraph3D:
    """Self-consistency oracle: the graph the annotations themselves describe.

    Scores 1.0 on every defined metric with zero duplicates.
    """
    graph = SceneGraph3D(scene_id=scene_id)
    ref_to_id: dict[str, int] = {}
    for ann in annotations.objects:
        node_id = graph.allocate_node_id()
        graph.nodes[node_id] = ObjectNode3D(
            node_id=node_id,
            label=ann.label,
            description="",
            category="",
            room_type=ann.room_type,
            centroid=ann.centroid,
            point_count=1,
            aabb=Aabb(ann.centroid, ann.centroid),
            observed_in=set(),
        )
        ref_to_id[ann.ref] = node_id
    for rel in annotations.relations:
        src = ref_to_id[rel.subject]
        dst = ref_to_id[rel.object]
        predicate = sorted(rel.predicates)[0]
        graph.edges.append(
            RelationEdge(
                src=src,
                dst=dst,
                predicate=predicate,
                distance_m=pairwise_distance(
                    graph.nodes[src].centroid, graph.nodes[dst].centroid
                ),
            )
        )
    return graph


def format_report(report: EvalReport) -> str:
    """Human-readable table; absent metrics print as '-'."""

    def fmt(value: Optional[float]) -> str:
        return "-" if value is None else f"{value:.3f}"

    rows = [
        ("node precision", fmt(report.node_precision)),
        ("room precision", fmt(report.room_precision)),
        ("edge precision", fmt(report.edge_precision)),
        ("duplicates", str(report.duplicates)),
        ("valid objects", fmt(report.valid_object_fraction)),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{name.ljust(width)}  {value}" for name, value in rows]
    for stage, seconds in sorted(report.stage_timings_s.items()):
        lines.append(f"{('time ' + stage).ljust(width)}  {seconds:.2f}s")
    return "\n".join(lines)
