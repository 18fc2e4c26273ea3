"""Run manifests: resolved config, input content hashes, timestamps."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

MANIFEST_NAME = "run_manifest.json"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def hash_directory(path) -> str:
    """Content hash of a directory: file names and bytes, sorted by name.

    The run manifest itself is excluded (it carries timestamps)."""
    root = Path(path)
    digest = hashlib.sha256()
    for file in sorted(p for p in root.rglob("*") if p.is_file()):
        if file.name == MANIFEST_NAME:
            continue
        digest.update(str(file.relative_to(root)).encode())
        digest.update(bytes.fromhex(sha256_file(file)))
    return digest.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__
    started: str = field(default_factory=_utc_now)
    finished: str | None = None

    def fingerprint_inputs(self, paths: dict):
        """paths: label -> file or directory path."""
        for label, path in paths.items():
            p = Path(path)
            self.inputs[label] = hash_directory(p) if p.is_dir() else sha256_file(p)

    def write(self, directory):
        out = Path(directory) / MANIFEST_NAME
        payload = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "extra": self.extra,
            "tool_version": self.tool_version,
            "started": self.started,
            "finished": self.finished,
        }
        with open(out, "w") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def finalize(self, directory):
        self.finished = _utc_now()
        self.write(directory)
