"""Perception wire protocol: chunked 2D scene-graph and grounding backends.

Two interchangeable backends sit behind BackendDescriptor: an HTTP client
speaking the JSON protocol below, and a deterministic replay backend that
serves recorded fixture files (chunk_<id>.json / ground_<id>.json).

Scene-graph response schema (schema_version 1):
    {"schema_version": 1, "chunk_id": N,
     "objects": [{"local_id", "label", "description", "category",
                  "room_type", "frame_id", "bbox"?}],
     "relations": [{"subject", "predicate", "object"}]}

Grounding response schema (schema_version 1):
    {"schema_version": 1,
     "detections": [{"label", "frame_id", "bbox": [u0, v0, u1, v1],
                     "mask_rle": [counts...], "confidence"}]}

mask_rle is alternating (unset, set) run counts in row-major order starting
with an unset run; the counts must sum to height * width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import requests

from .errors import (
    DomainError,
    FixtureConflictError,
    MaskDecodeError,
    SchemaError,
    TransportError,
)
from .geometry import Pose
from .model import Detection2D, PosedFrame, SceneGraph2D, normalize_label, normalize_text

WIRE_SCHEMA_VERSION = 1
DEFAULT_CHUNK_SIZE = 10
DEFAULT_CONFIDENCE_THRESHOLD = 0.3
# The backend routinely reports structural surfaces; they are not objects the
# graph should track. Case-insensitive substring patterns, configurable.
DEFAULT_EXCLUSIONS: tuple[str, ...] = ("wall", "floor", "ceiling", "door frame")

SCENE_GRAPH_ROUTE = "/v1/scene_graph"
GROUNDING_ROUTE = "/v1/ground"


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a binary mask as alternating (unset, set) run counts."""
    flat = np.asarray(mask, dtype=bool).ravel()
    counts: list[int] = []
    expect_set = False  # streams start with an unset run
    pos = 0
    while pos < flat.size:
        run_val = flat[pos]
        end = pos
        while end < flat.size and flat[end] == run_val:
            end += 1
        if bool(run_val) != expect_set:
            counts.append(0)
            expect_set = not expect_set
        counts.append(end - pos)
        expect_set = not expect_set
        pos = end
    return counts


def rle_decode(counts: list[int], height: int, width: int) -> np.ndarray:
    """Decode alternating (unset, set) run counts into an H x W bool mask."""
    total = height * width
    if any((not isinstance(c, int)) or c < 0 for c in counts):
        raise MaskDecodeError(f"run counts must be non-negative integers, got {counts!r}")
    if sum(counts) != total:
        raise MaskDecodeError(
            f"run counts sum to {sum(counts)}, expected {total} for {height}x{width}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for count in counts:
        if value:
            flat[pos : pos + count] = True
        pos += count
        value = not value
    return flat.reshape(height, width)


@dataclass(frozen=True)
class ChunkRequest:
    """One perception request covering a window of consecutive frames."""

    chunk_id: int
    frames: list[tuple[int, str, Pose]]
    profile: Literal["scene_graph", "grounding"] = "scene_graph"

    def __post_init__(self):
        if not self.frames:
            raise DomainError(f"chunk {self.chunk_id}: a request needs at least one frame")

    def to_payload(self) -> dict:
        return {
            "schema_version": WIRE_SCHEMA_VERSION,
            "chunk_id": self.chunk_id,
            "profile": self.profile,
            "frames": [
                {
                    "frame_id": frame_id,
                    "rgb_ref": rgb_ref,
                    "pose": {
                        "t": [pose.position.x, pose.position.y, pose.position.z],
                        "q": list(pose.orientation),
                    },
                }
                for frame_id, rgb_ref, pose in self.frames
            ],
        }


@dataclass(frozen=True)
class BackendDescriptor:
    """Handle for a perception backend: HTTP endpoint or fixture directory."""

    kind: Literal["http", "replay"]
    endpoint: str = ""
    fixture_dir: Optional[Path] = None
    timeout_s: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.kind == "replay":
            if self.fixture_dir is None or not Path(self.fixture_dir).is_dir():
                raise DomainError(f"replay fixture directory missing: {self.fixture_dir}")
            object.__setattr__(self, "fixture_dir", Path(self.fixture_dir))
        elif self.kind == "http":
            if not self.endpoint:
                raise DomainError("http backend needs an endpoint URL")
        else:
            raise DomainError(f"unknown backend kind {self.kind!r}")


def _http_post(backend: BackendDescriptor, route: str, payload: dict) -> dict:
    url = backend.endpoint.rstrip("/") + route
    attempts = backend.retries + 1
    last_error: Exception | None = None
    for _ in range(attempts):
        try:
            resp = requests.post(url, json=payload, timeout=backend.timeout_s)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = TransportError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            continue
        if resp.status_code != 200:
            raise TransportError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise SchemaError(f"{url}: response is not JSON: {exc}", payload=resp.text)
    raise TransportError(f"{url} unreachable after {attempts} attempts: {last_error}")


def _read_fixture(backend: BackendDescriptor, name: str) -> dict:
    path = Path(backend.fixture_dir) / name
    if not path.is_file():
        raise TransportError(f"fixture {path} not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise SchemaError(f"fixture {path} is not valid JSON: {exc}", payload=str(path))


def _require(payload: dict, key: str, kind, path: str):
    if key not in payload:
        raise SchemaError(f"{path}.{key}: missing", payload=payload)
    value = payload[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"{path}.{key}: expected number, got {value!r}", payload=payload)
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise SchemaError(
            f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}", payload=payload
        )
    return value


def parse_scene_graph_response(payload: dict, expected_chunk_id: int) -> SceneGraph2D:
    """Validate a scene-graph response body and build a SceneGraph2D.

    Enforces unique local_ids, declared relation endpoints, and no
    self-relations; labels and predicates are NFC-normalized and trimmed.
    """
    if not isinstance(payload, dict):
        raise SchemaError(f"response: expected object, got {type(payload).__name__}", payload)
    version = _require(payload, "schema_version", int, "response")
    if version != WIRE_SCHEMA_VERSION:
        raise SchemaError(f"response.schema_version: unsupported version {version}", payload)
    chunk_id = _require(payload, "chunk_id", int, "response")
    if chunk_id != expected_chunk_id:
        raise SchemaError(
            f"response.chunk_id: got {chunk_id}, expected {expected_chunk_id}", payload
        )
    raw_objects = _require(payload, "objects", list, "response")
    raw_relations = _require(payload, "relations", list, "response")

    objects: list[Detection2D] = []
    frame_ids: set[int] = set()
    seen_ids: set[int] = set()
    for i, obj in enumerate(raw_objects):
        path = f"response.objects[{i}]"
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}: expected object", payload)
        local_id = _require(obj, "local_id", int, path)
        if local_id in seen_ids:
            raise SchemaError(f"{path}.local_id: duplicate local_id {local_id}", payload)
        seen_ids.add(local_id)
        bbox = obj.get("bbox", [0, 0, 0, 0])
        if not (isinstance(bbox, list) and len(bbox) == 4):
            raise SchemaError(f"{path}.bbox: expected [u_min, v_min, u_max, v_max]", payload)
        objects.append(
            Detection2D(
                local_id=local_id,
                label=normalize_text(_require(obj, "label", str, path)),
                description=normalize_text(str(obj.get("description", ""))),
                category=normalize_text(str(obj.get("category", ""))),
                room_type=normalize_text(str(obj.get("room_type", ""))),
                bbox=tuple(int(b) for b in bbox),
                frame_id=_require(obj, "frame_id", int, path),
            )
        )
        frame_ids.add(objects[-1].frame_id)

    relations: list[tuple[int, str, int]] = []
    for i, rel in enumerate(raw_relations):
        path = f"response.relations[{i}]"
        if not isinstance(rel, dict):
            raise SchemaError(f"{path}: expected object", payload)
        subject = _require(rel, "subject", int, path)
        obj_id = _require(rel, "object", int, path)
        predicate = normalize_text(_require(rel, "predicate", str, path))
        for side, endpoint in (("subject", subject), ("object", obj_id)):
            if endpoint not in seen_ids:
                raise SchemaError(
                    f"{path}.{side}: references undeclared local_id {endpoint}", payload
                )
        if subject == obj_id:
            raise SchemaError(f"{path}: self-relation on local_id {subject}", payload)
        relations.append((subject, predicate, obj_id))

    return SceneGraph2D(
        chunk_id=chunk_id, objects=objects, relations=relations, frame_ids=sorted(frame_ids)
    )


def request_scene_graph_2d(chunk: ChunkRequest, backend: BackendDescriptor) -> SceneGraph2D:
    """Fetch and validate the 2D scene graph for a chunk of frames."""
    if backend.kind == "replay":
        payload = _read_fixture(backend, f"chunk_{chunk.chunk_id}.json")
    else:
        payload = _http_post(backend, SCENE_GRAPH_ROUTE, chunk.to_payload())
    return parse_scene_graph_response(payload, chunk.chunk_id)


def filter_objects(sg2d: SceneGraph2D, exclusion_list: tuple[str, ...] | list[str]) -> SceneGraph2D:
    """Drop objects whose normalized label matches any exclusion pattern.

    Matching is case-insensitive substring; relations incident to a removed
    object go with it. Idempotent.
    """
    patterns = [normalize_label(p) for p in exclusion_list if p.strip()]

    def excluded(det: Detection2D) -> bool:
        name = normalize_label(det.label)
        return any(p in name for p in patterns)

    kept = [det for det in sg2d.objects if not excluded(det)]
    kept_ids = {det.local_id for det in kept}
    relations = [
        (s, p, o) for (s, p, o) in sg2d.relations if s in kept_ids and o in kept_ids
    ]
    return SceneGraph2D(
        chunk_id=sg2d.chunk_id,
        objects=kept,
        relations=relations,
        frame_ids=list(sg2d.frame_ids),
    )


def parse_grounding_response(
    payload: dict,
    frame: PosedFrame,
    labels: list[str],
    confidence_threshold: float,
) -> list[Detection2D]:
    """Validate a grounding response and decode masks for one frame.

    Returns detections for the requested labels only, with detections below
    the confidence threshold dropped. An absent label is not an error.
    """
    if not isinstance(payload, dict):
        raise SchemaError(f"response: expected object, got {type(payload).__name__}", payload)
    version = _require(payload, "schema_version", int, "response")
    if version != WIRE_SCHEMA_VERSION:
        raise SchemaError(f"response.schema_version: unsupported version {version}", payload)
    raw = _require(payload, "detections", list, "response")
    wanted = {normalize_label(lbl) for lbl in labels}
    h, w = frame.intrinsics.height, frame.intrinsics.width

    detections: list[Detection2D] = []
    for i, det in enumerate(raw):
        path = f"response.detections[{i}]"
        if not isinstance(det, dict):
            raise SchemaError(f"{path}: expected object", payload)
        frame_id = _require(det, "frame_id", int, path)
        if frame_id != frame.frame_id:
            continue
        label = normalize_text(_require(det, "label", str, path))
        if normalize_label(label) not in wanted:
            continue
        confidence = _require(det, "confidence", float, path)
        if not (0.0 <= confidence <= 1.0):
            raise SchemaError(f"{path}.confidence: {confidence} outside [0, 1]", payload)
        if confidence < confidence_threshold:
            continue
        bbox = _require(det, "bbox", list, path)
        if len(bbox) != 4:
            raise SchemaError(f"{path}.bbox: expected 4 values, got {len(bbox)}", payload)
        counts = _require(det, "mask_rle", list, path)
        mask = rle_decode(counts, h, w)
        try:
            detections.append(
                Detection2D(
                    local_id=-1,  # assigned when joined with the 2D scene graph
                    label=label,
                    description="",
                    category="",
                    room_type="",
                    bbox=tuple(int(b) for b in bbox),
                    frame_id=frame_id,
                    mask=mask,
                )
            )
        except DomainError as exc:
            raise SchemaError(f"{path}: {exc}", payload)
    return detections


def ground_objects(
    labels: list[str],
    frame: PosedFrame,
    backend: BackendDescriptor,
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> list[Detection2D]:
    """Request segmentation masks for the given labels in one frame."""
    if not labels:
        raise DomainError("grounding requires at least one label")
    if backend.kind == "replay":
        payload = _replay_grounding_payload(backend, frame.frame_id)
    else:
        payload = _http_post(
            backend,
            GROUNDING_ROUTE,
            {
                "schema_version": WIRE_SCHEMA_VERSION,
                "frame_id": frame.frame_id,
                "rgb_ref": frame.rgb_ref,
                "labels": list(labels),
            },
        )
    return parse_grounding_response(payload, frame, labels, confidence_threshold)


def _replay_grounding_payload(backend: BackendDescriptor, frame_id: int) -> dict:
    """Merge every ground_*.json fixture that mentions the frame."""
    detections: list[dict] = []
    fixture_dir = Path(backend.fixture_dir)
    found_any = False
    for path in sorted(fixture_dir.glob("ground_*.json")):
        found_any = True
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise SchemaError(f"fixture {path} is not valid JSON: {exc}", payload=str(path))
        for det in payload.get("detections", []):
            if isinstance(det, dict) and det.get("frame_id") == frame_id:
                detections.append(det)
    if not found_any:
        raise TransportError(f"no grounding fixtures under {fixture_dir}")
    return {"schema_version": WIRE_SCHEMA_VERSION, "detections": detections}


def record_fixture(chunk: ChunkRequest, response_bytes: bytes, fixture_dir: Path) -> Path:
    """Freeze a schema-validated response under the chunk's fixture name.

    Re-recording identical bytes is a no-op; differing bytes are rejected so
    recorded fixtures stay immutable.
    """
    payload = json.loads(response_bytes.decode("utf-8"))
    if chunk.profile == "scene_graph":
        parse_scene_graph_response(payload, chunk.chunk_id)
        name = f"chunk_{chunk.chunk_id}.json"
    else:
        _validate_grounding_shape(payload)
        name = f"ground_{chunk.chunk_id}.json"
    fixture_dir = Path(fixture_dir)
    fixture_dir.mkdir(parents=True, exist_ok=True)
    path = fixture_dir / name
    if path.exists():
        if path.read_bytes() == response_bytes:
            return path
        raise FixtureConflictError(f"{path} already recorded with different content")
    path.write_bytes(response_bytes)
    return path


def _validate_grounding_shape(payload: dict) -> None:
    """Frame-independent schema check used when recording grounding fixtures."""
    if not isinstance(payload, dict):
        raise SchemaError("response: expected object", payload)
    version = _require(payload, "schema_version", int, "response")
    if version != WIRE_SCHEMA_VERSION:
        raise SchemaError(f"response.schema_version: unsupported version {version}", payload)
    raw = _require(payload, "detections", list, "response")
    for i, det in enumerate(raw):
        path = f"response.detections[{i}]"
        if not isinstance(det, dict):
            raise SchemaError(f"{path}: expected object", payload)
        _require(det, "label", str, path)
        _require(det, "frame_id", int, path)
        confidence = _require(det, "confidence", float, path)
        if not (0.0 <= confidence <= 1.0):
            raise SchemaError(f"{path}.confidence: {confidence} outside [0, 1]", payload)
        bbox = _require(det, "bbox", list, path)
        if len(bbox) != 4:
            raise SchemaError(f"{path}.bbox: expected 4 values", payload)
        counts = _require(det, "mask_rle", list, path)
        if any((not isinstance(c, int)) or c < 0 for c in counts):
            raise SchemaError(f"{path}.mask_rle: counts must be non-negative integers", payload)
