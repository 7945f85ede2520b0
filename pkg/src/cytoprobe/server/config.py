"""Server configuration: JSON file, schema-validated, env-var overridable."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import jsonschema

from ..errors import ValidationError
from ..inject import ScoringConfig

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "host": {"type": "string"},
        "port": {"type": "integer", "minimum": 1, "maximum": 65535},
        "data_dir": {"type": "string"},
        "snapshot_every": {"type": "integer", "minimum": 0},
        "scoring": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "base_points": {"type": "integer", "minimum": 0},
                "streak_bonus": {"type": "integer", "minimum": 0},
                "streak_bonus_cap": {"type": "integer", "minimum": 0},
                "confidence": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
    },
}

ENV_PREFIX = "CYTOPROBE_"


@dataclass
class ServerConfig:
    data_dir: str
    host: str = "127.0.0.1"
    port: int = 8000
    snapshot_every: int = 100
    scoring: ScoringConfig = field(default_factory=ScoringConfig)


def load_config(path: str | None = None, env: dict | None = None) -> ServerConfig:
    """Build the config from an optional JSON file plus environment overrides.

    Overrides: CYTOPROBE_HOST, CYTOPROBE_PORT, CYTOPROBE_DATA_DIR.
    """
    env = os.environ if env is None else env
    doc: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as err:
            raise ValidationError(f"bad config {path}: {err.message}") from err

    host = env.get(ENV_PREFIX + "HOST", doc.get("host", "127.0.0.1"))
    port = int(env.get(ENV_PREFIX + "PORT", doc.get("port", 8000)))
    data_dir = env.get(ENV_PREFIX + "DATA_DIR", doc.get("data_dir"))
    if not data_dir:
        raise ValidationError("data_dir required (config file or CYTOPROBE_DATA_DIR)")
    scoring_doc = doc.get("scoring", {})
    return ServerConfig(
        data_dir=data_dir,
        host=host,
        port=port,
        snapshot_every=doc.get("snapshot_every", 100),
        scoring=ScoringConfig(**scoring_doc),
    )
