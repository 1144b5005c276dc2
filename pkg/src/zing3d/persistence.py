"""Durable graph storage and export formats.

Graphs persist as a single deterministic JSON document (sorted keys, nodes
ordered by id, edges by (src, dst, predicate)), so saving the same graph
twice yields byte-identical files. Floats serialize with Python's
shortest-round-trip repr, so load(save(g)) is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import ValidationError, VersionError
from .geometry import Aabb, Point3
from .model import ObjectNode3D, RelationEdge, SceneGraph3D, validate_graph

DOCUMENT_SCHEMA_VERSION = 1


def _point_to_json(p: Point3) -> list[float]:
    return [p.x, p.y, p.z]


def _node_to_json(node: ObjectNode3D) -> dict:
    return {
        "node_id": node.node_id,
        "label": node.label,
        "description": node.description,
        "category": node.category,
        "room_type": node.room_type,
        "centroid": _point_to_json(node.centroid),
        "point_count": node.point_count,
        "aabb": {
            "min": _point_to_json(node.aabb.min_corner),
            "max": _point_to_json(node.aabb.max_corner),
        },
        "observed_in": sorted(node.observed_in),
        "created_chunk": node.created_chunk,
        "last_updated_chunk": node.last_updated_chunk,
        "contributions": [list(c) for c in sorted(node.contributions)],
    }


def graph_to_document(graph: SceneGraph3D) -> dict:
    return {
        "schema_version": DOCUMENT_SCHEMA_VERSION,
        "scene_id": graph.scene_id,
        "id_counter": graph.id_counter,
        "chunks_ingested": graph.chunks_ingested,
        "ingested_chunks": sorted(graph.ingested_chunks),
        "nodes": [_node_to_json(graph.nodes[nid]) for nid in sorted(graph.nodes)],
        "edges": [
            {"src": e.src, "dst": e.dst, "predicate": e.predicate, "distance_m": e.distance_m}
            for e in sorted(graph.edges, key=lambda e: (e.src, e.dst, e.predicate))
        ],
    }


def _point_from_json(values, where: str) -> Point3:
    if not (isinstance(values, list) and len(values) == 3):
        raise ValidationError(f"{where}: expected [x, y, z], got {values!r}")
    return Point3(float(values[0]), float(values[1]), float(values[2]))


def document_to_graph(doc: dict) -> SceneGraph3D:
    if not isinstance(doc, dict):
        raise ValidationError("graph document must be a JSON object")
    version = doc.get("schema_version")
    if version != DOCUMENT_SCHEMA_VERSION:
        raise VersionError(f"unsupported graph schema_version {version!r}")
    try:
        graph = SceneGraph3D(
            scene_id=str(doc["scene_id"]),
            id_counter=int(doc["id_counter"]),
            ingested_chunks=set(int(c) for c in doc.get("ingested_chunks", [])),
        )
        for raw in doc["nodes"]:
            node = ObjectNode3D(
                node_id=int(raw["node_id"]),
                label=str(raw["label"]),
                description=str(raw["description"]),
                category=str(raw["category"]),
                room_type=str(raw["room_type"]),
                centroid=_point_from_json(raw["centroid"], "node.centroid"),
                point_count=int(raw["point_count"]),
                aabb=Aabb(
                    _point_from_json(raw["aabb"]["min"], "node.aabb.min"),
                    _point_from_json(raw["aabb"]["max"], "node.aabb.max"),
                ),
                observed_in=set(int(f) for f in raw.get("observed_in", [])),
                created_chunk=int(raw.get("created_chunk", 0)),
                last_updated_chunk=int(raw.get("last_updated_chunk", 0)),
                contributions=set(tuple(int(v) for v in c) for c in raw.get("contributions", [])),
            )
            graph.nodes[node.node_id] = node
        for raw in doc["edges"]:
            graph.edges.append(
                RelationEdge(
                    src=int(raw["src"]),
                    dst=int(raw["dst"]),
                    predicate=str(raw["predicate"]),
                    distance_m=float(raw["distance_m"]),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed graph document: {exc!r}")
    return graph


def save_graph(graph: SceneGraph3D, path: Path | str) -> None:
    """Write a validated graph as deterministic JSON."""
    violations = validate_graph(graph)
    if violations:
        raise ValidationError(
            f"refusing to save an invalid graph ({len(violations)} violations)", violations
        )
    document = graph_to_document(graph)
    Path(path).write_text(
        json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_graph(path: Path | str) -> SceneGraph3D:
    """Load a graph document, guarding schema version and invariants."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}")
    graph = document_to_graph(doc)
    violations = validate_graph(graph)
    if violations:
        raise ValidationError(f"{path}: loaded graph is invalid", violations)
    return graph


def append_jsonl(path: Path | str, record: dict) -> None:
    """Append one JSON object as a line (chunk-report log format)."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _node_dot_label(node: ObjectNode3D) -> str:
    c = node.centroid
    lines = [node.label]
    if node.room_type:
        lines.append(node.room_type)
    lines.append(f"({c.x:.2f}, {c.y:.2f}, {c.z:.2f})")
    return "\\n".join(_dot_escape(line) for line in lines)


def export_dot(graph: SceneGraph3D, path: Path | str, goal_node_id: int | None = None) -> None:
    """Render the graph as a DOT digraph.

    Node labels carry label, room type, and the rounded centroid; edge
    labels carry the predicate and distance in meters (2 decimals). When
    goal_node_id is given (pruned graphs) that node is filled gold.
    """
    violations = validate_graph(graph)
    if violations:
        raise ValidationError(
            f"refusing to export an invalid graph ({len(violations)} violations)", violations
        )
    lines = ["digraph scene {", "  node [shape=box];"]
    for nid in sorted(graph.nodes):
        node = graph.nodes[nid]
        attrs = f'label="{_node_dot_label(node)}"'
        if goal_node_id is not None and nid == goal_node_id:
            attrs += ', style=filled, fillcolor="gold"'
        lines.append(f"  n{nid} [{attrs}];")
    for edge in sorted(graph.edges, key=lambda e: (e.src, e.dst, e.predicate)):
        label = _dot_escape(f"{edge.predicate} ({edge.distance_m:.2f} m)")
        lines.append(f'  n{edge.src} -> n{edge.dst} [label="{label}"];')
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
