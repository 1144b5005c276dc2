"""Run configuration files: a TOML document mapped onto PipelineConfig.

Grammar (all keys optional, unknown keys rejected):

    [fusion]
    association_distance = 0.5        # meters, > 0
    label_match = "exact-normalized"  # or "token-overlap"
    min_points = 20                   # >= 1

    [perception]
    exclusions = ["wall", "floor", "ceiling", "door frame"]
    grounding_confidence = 0.3        # in [0, 1]
    chunk_size = 10                   # >= 1

Command-line flags override file values.
"""

from __future__ import annotations

from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, DomainError
from .fusion import FusionConfig, PipelineConfig

_FUSION_KEYS = {"association_distance", "label_match", "min_points"}
_PERCEPTION_KEYS = {"exclusions", "grounding_confidence", "chunk_size"}


def load_config(path: Path | str | None) -> PipelineConfig:
    """Parse a config file; None yields the defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}")

    unknown_sections = set(doc) - {"fusion", "perception"}
    if unknown_sections:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown_sections)}")

    fusion_raw = doc.get("fusion", {})
    perception_raw = doc.get("perception", {})
    for name, raw, allowed in (
        ("fusion", fusion_raw, _FUSION_KEYS),
        ("perception", perception_raw, _PERCEPTION_KEYS),
    ):
        extra = set(raw) - allowed
        if extra:
            raise ConfigError(f"{path}: unknown [{name}] keys {sorted(extra)}")

    label_match = fusion_raw.get("label_match", "exact-normalized")
    if label_match not in ("exact-normalized", "token-overlap"):
        raise ConfigError(f"{path}: label_match must be exact-normalized or token-overlap")
    try:
        fusion = FusionConfig(
            association_distance=float(fusion_raw.get("association_distance", 0.5)),
            label_match=label_match,
            min_points=int(fusion_raw.get("min_points", 20)),
        )
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: bad [fusion] values: {exc}")

    exclusions = perception_raw.get("exclusions", None)
    if exclusions is not None and (
        not isinstance(exclusions, list) or not all(isinstance(e, str) for e in exclusions)
    ):
        raise ConfigError(f"{path}: exclusions must be a list of strings")
    confidence = perception_raw.get("grounding_confidence", 0.3)
    if not isinstance(confidence, (int, float)) or not (0.0 <= float(confidence) <= 1.0):
        raise ConfigError(f"{path}: grounding_confidence must lie in [0, 1]")
    chunk_size = perception_raw.get("chunk_size", 10)
    if not isinstance(chunk_size, int) or chunk_size < 1:
        raise ConfigError(f"{path}: chunk_size must be a positive integer")

    defaults = PipelineConfig()
    return PipelineConfig(
        fusion=fusion,
        exclusions=tuple(exclusions) if exclusions is not None else defaults.exclusions,
        grounding_confidence=float(confidence),
        chunk_size=chunk_size,
    )
