"""Run manifests: one JSON document per run directory.

A manifest records the command, fully resolved config, seeds, input
hashes, artifact paths and timings — enough to re-execute the run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import InvalidInputError


def hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def hash_inputs(paths) -> dict[str, str]:
    """Content hashes for files; directories hash their sorted PNG/JSON members."""
    out: dict[str, str] = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            digest = hashlib.sha256()
            for f in sorted(p.glob("*")):
                if f.is_file():
                    digest.update(f.name.encode())
                    digest.update(hash_file(f).encode())
            out[str(p)] = digest.hexdigest()
        elif p.is_file():
            out[str(p)] = hash_file(p)
    return out


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    tool_version: str = __version__
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def write(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / "manifest.json"
        if path.exists():
            raise InvalidInputError(f"run directory already holds a manifest: {path}")
        payload = {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "input_hashes": self.input_hashes,
            "artifacts": self.artifacts,
            "timings": self.timings,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
        return path

    @classmethod
    def read(cls, run_dir) -> "RunManifest":
        path = Path(run_dir) / "manifest.json"
        if not path.exists():
            raise InvalidInputError(f"no manifest in {run_dir}")
        raw = json.loads(path.read_text())
        raw.pop("created_at", None)
        return cls(**raw)
