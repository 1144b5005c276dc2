"""Task-guided pruning: a goal node plus its nearest relevant neighborhood.

Goal selection asks a reasoning backend when one is configured; otherwise a
deterministic lexical fallback scores token overlap between the query and
each node's label + description. Neighbors are ranked by metric proximity
to the goal centroid, optionally gated by distance from the robot pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import DomainError, InvalidSelection, NoCandidate, SchemaError
from .geometry import Pose, pairwise_distance
from .model import ObjectNode3D, RelationEdge, SceneGraph3D, tokenize
from .perception import WIRE_SCHEMA_VERSION, BackendDescriptor, _http_post
from .persistence import graph_to_document

SELECT_GOAL_ROUTE = "/v1/select_goal"

# Filler words that carry no object identity in navigation queries.
_QUERY_STOPWORDS = frozenset(
    "a an and at by find go in is near navigate of on the to toward towards walk move".split()
)


@dataclass(frozen=True)
class PruneQuery:
    """A navigation query plus optional spatial context."""

    query_text: str
    robot_pose: Optional[Pose] = None
    max_nodes: int = 8
    max_radius: Optional[float] = None

    def __post_init__(self):
        if self.max_nodes < 1:
            raise DomainError("max_nodes must be at least 1")
        if self.max_radius is not None and self.max_radius <= 0:
            raise DomainError("max_radius must be positive when set")


@dataclass
class PrunedGraph:
    """A goal-centered subgraph capped at the query's node budget."""

    goal_node_id: int
    nodes: dict[int, ObjectNode3D]
    edges: list[RelationEdge]
    rationale: dict[int, str]
    scene_id: str
    query: str = ""
    id_counter: int = 0
    ingested_chunks: set[int] = field(default_factory=set)

    def to_graph(self) -> SceneGraph3D:
        return SceneGraph3D(
            scene_id=self.scene_id,
            nodes=dict(self.nodes),
            edges=list(self.edges),
            ingested_chunks=set(self.ingested_chunks),
            id_counter=self.id_counter,
        )


def _lexical_score(query_tokens: set[str], node: ObjectNode3D) -> int:
    return len(query_tokens & tokenize(f"{node.label} {node.description}"))


def select_goal(
    graph: SceneGraph3D,
    query_text: str,
    backend: Optional[BackendDescriptor] = None,
    robot_pose: Optional[Pose] = None,
) -> int:
    """Pick the node most relevant to the query.

    With an HTTP backend the serialized graph and query go to the reasoning
    service, whose answer must name an existing node. Without one (or with a
    replay backend), the lexical fallback takes the highest token overlap
    between the query and label + description; ties break by distance to
    robot_pose, then lowest node_id.
    """
    if not graph.nodes:
        raise NoCandidate("graph has no nodes")

    if backend is not None and backend.kind == "http":
        payload = _http_post(
            backend,
            SELECT_GOAL_ROUTE,
            {
                "schema_version": WIRE_SCHEMA_VERSION,
                "query": query_text,
                "graph": graph_to_document(graph),
            },
        )
        node_id = payload.get("node_id")
        if not isinstance(node_id, int) or isinstance(node_id, bool):
            raise SchemaError(f"select_goal response.node_id: got {node_id!r}", payload)
        if node_id not in graph.nodes:
            raise InvalidSelection(f"backend selected unknown node_id {node_id}")
        return node_id

    query_tokens = tokenize(query_text) - _QUERY_STOPWORDS

    def sort_key(node: ObjectNode3D):
        distance = (
            pairwise_distance(node.centroid, robot_pose.position)
            if robot_pose is not None
            else 0.0
        )
        return (-_lexical_score(query_tokens, node), distance, node.node_id)

    best = min(graph.nodes.values(), key=sort_key)
    if _lexical_score(query_tokens, best) == 0:
        raise NoCandidate(f"no node overlaps query {query_text!r}")
    return best.node_id


def prune(
    graph: SceneGraph3D, q: PruneQuery, backend: Optional[BackendDescriptor] = None
) -> PrunedGraph:
    """Select the goal and its nearest eligible neighbors, capped at max_nodes.

    Neighbors rank by centroid distance to the goal (ties by node_id). When
    both robot_pose and max_radius are set, nodes farther than max_radius
    from the robot are ineligible; the goal itself is always kept.
    """
    goal_id = select_goal(graph, q.query_text, backend, robot_pose=q.robot_pose)
    goal = graph.nodes[goal_id]

    def eligible(node: ObjectNode3D) -> bool:
        if q.robot_pose is None or q.max_radius is None:
            return True
        return pairwise_distance(node.centroid, q.robot_pose.position) <= q.max_radius

    candidates = sorted(
        (
            node
            for node in graph.nodes.values()
            if node.node_id != goal_id and eligible(node)
        ),
        key=lambda n: (pairwise_distance(n.centroid, goal.centroid), n.node_id),
    )

    kept: dict[int, ObjectNode3D] = {goal_id: goal}
    rationale: dict[int, str] = {goal_id: f"goal for query {q.query_text!r}"}
    for rank, node in enumerate(candidates[: q.max_nodes - 1], start=1):
        kept[node.node_id] = node
        distance = pairwise_distance(node.centroid, goal.centroid)
        rationale[node.node_id] = f"neighbor #{rank}: {distance:.2f} m from goal"

    edges = [e for e in graph.edges if e.src in kept and e.dst in kept]
    return PrunedGraph(
        goal_node_id=goal_id,
        nodes=kept,
        edges=edges,
        rationale=rationale,
        scene_id=graph.scene_id,
        query=q.query_text,
        id_counter=graph.id_counter,
        ingested_chunks=set(graph.ingested_chunks),
    )


def save_pruned(pruned: PrunedGraph, path: Path | str) -> None:
    """Persist a pruned graph: full-graph schema plus goal_node_id and query."""
    doc = graph_to_document(pruned.to_graph())
    doc["goal_node_id"] = pruned.goal_node_id
    doc["query"] = pruned.query
    doc["rationale"] = {str(k): v for k, v in sorted(pruned.rationale.items())}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
