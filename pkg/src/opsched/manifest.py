"""Run manifests: what was run, with which inputs, by which version."""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    config_hash: str
    version: str
    started: str
    finished: str = ""
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    python: str = field(default_factory=platform.python_version)

    @classmethod
    def start(cls, command: str, config: dict, inputs=()) -> "RunManifest":
        digests = {str(p): file_digest(p) for p in inputs if p and Path(p).is_file()}
        return cls(command, config, config_hash(config), __version__,
                   datetime.now(timezone.utc).isoformat(timespec="seconds"), inputs=digests)

    def finish(self, outputs=()) -> "RunManifest":
        self.outputs = sorted(str(o) for o in outputs)
        self.finished = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return self

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n",
                              encoding="utf-8")
