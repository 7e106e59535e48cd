"""Run manifests: what was produced, from which config, with which checksums.

The manifest carries timestamps and is therefore excluded from byte-identity
comparisons; every other report artifact a run emits must be reproducible
byte-for-byte from (config, seed).
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def code_version(repo_hint: Path | None = None) -> str:
    root = repo_hint or Path(__file__).resolve()
    try:
        out = subprocess.run(
            ["git", "-C", str(root if root.is_dir() else root.parent), "rev-parse", "HEAD"],
            capture_output=True, text=True, timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


@dataclass
class RunManifest:
    config_hash: str
    code_version: str = ""
    created: str = ""
    finished: str = ""
    files: dict = field(default_factory=dict)  # relpath -> {sha256, bytes}
    metrics: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)  # timings etc.

    def __post_init__(self):
        if not self.code_version:
            self.code_version = code_version()
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat()

    def add_file(self, run_dir, path) -> None:
        rel = str(Path(path).resolve().relative_to(Path(run_dir).resolve()))
        self.files[rel] = {"sha256": file_sha256(path), "bytes": Path(path).stat().st_size}

    def write(self, run_dir) -> Path:
        self.finished = datetime.now(timezone.utc).isoformat()
        out = Path(run_dir) / MANIFEST_NAME
        body = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "created": self.created,
            "finished": self.finished,
            "files": {k: self.files[k] for k in sorted(self.files)},
            "metrics": self.metrics,
            "notes": self.notes,
        }
        out.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return out


def read_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / MANIFEST_NAME).read_text())


def verify_manifest(run_dir) -> list[str]:
    """Return a list of problems (missing files / checksum mismatches)."""
    body = read_manifest(run_dir)
    problems = []
    for rel, info in body["files"].items():
        p = Path(run_dir) / rel
        if not p.exists():
            problems.append(f"missing: {rel}")
        elif file_sha256(p) != info["sha256"]:
            problems.append(f"checksum mismatch: {rel}")
    return problems


__all__ = [
    "RunManifest",
    "read_manifest",
    "verify_manifest",
    "file_sha256",
    "code_version",
    "MANIFEST_NAME",
]
