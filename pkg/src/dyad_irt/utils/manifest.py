"""
Run manifests.

A manifest records what a run needs to be repeated: tool version, the
resolved configuration with its SHA-256, the seeds and the files written.
No timestamps, so rerunning the same configuration writes the same manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import InvalidConfigError

MANIFEST_FILENAME = "manifest.json"


def canonical_json(value: Any) -> str:  # noqa: ANN401
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def config_hash(config: dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class Manifest:
    command: str
    version: str
    config: dict[str, Any]
    seeds: dict[str, int] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    category_map: dict[str, int] = field(default_factory=dict)

    @property
    def config_sha256(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "command": self.command,
            "version": self.version,
            "config_sha256": self.config_sha256,
            "config": self.config,
            "seeds": self.seeds,
            "outputs": sorted(self.outputs),
        }
        if self.category_map:
            data["category_map"] = self.category_map
        return data

    def write(self, directory: Path) -> Path:
        path = directory / MANIFEST_FILENAME
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> Manifest:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            msg = f"Cannot read manifest {path}: {err}"
            raise InvalidConfigError(msg) from err
        missing = [key for key in ("command", "version", "config") if key not in data]
        if missing:
            msg = f"Manifest {path} lacks {', '.join(missing)}"
            raise InvalidConfigError(msg)
        manifest = cls(
            command=data["command"],
            version=data["version"],
            config=data["config"],
            seeds=data.get("seeds", {}),
            outputs=list(data.get("outputs", [])),
            category_map=data.get("category_map", {}),
        )
        recorded = data.get("config_sha256")
        if recorded is not None and recorded != manifest.config_sha256:
            msg = f"Manifest {path}: configuration does not match its recorded hash"
            raise InvalidConfigError(msg)
        return manifest
