"""Run artifact records: config digests, file hashes, resumable commands.

Every command writes its outputs under an artifact root (``--out`` flag, else
the ``DECADEGAN_ARTIFACTS`` environment variable, else ``./artifacts``) and
records a run artifact listing each produced file with its content hash.
Re-running with the same config digest verifies the record and skips the
work.  All writes are write-once via atomic renames.
"""

from __future__ import annotations

import hashlib
import json
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from .checkpoints import atomic_write_json
from .manifest import file_sha256

ENV_ARTIFACT_ROOT = "DECADEGAN_ARTIFACTS"
RECORD_NAME = "run.json"


def artifact_root(out: str | os.PathLike | None = None) -> Path:
    if out:
        return Path(out)
    env = os.environ.get(ENV_ARTIFACT_ROOT)
    return Path(env) if env else Path("artifacts")


@dataclass
class RunArtifact:
    run_id: str
    config_digest: str
    files: dict[str, dict] = field(default_factory=dict)  # name -> {path, sha256}

    @classmethod
    def new(cls, config_digest: str) -> "RunArtifact":
        return cls(run_id=uuid.uuid4().hex[:12], config_digest=config_digest)

    def add_file(self, name: str, path: Path, base: Path) -> None:
        path = Path(path)
        self.files[name] = {
            "path": str(path.relative_to(base)),
            "sha256": file_sha256(path),
        }

    def add_tree(self, name: str, directory: Path, base: Path) -> None:
        """Record a directory by hashing all its files into one digest."""
        directory = Path(directory)
        h = hashlib.sha256()
        for p in sorted(directory.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(directory)).encode())
                h.update(file_sha256(p).encode())
        self.files[name] = {
            "path": str(directory.relative_to(base)),
            "sha256": h.hexdigest(),
            "tree": True,
        }

    def save(self, directory: Path) -> None:
        atomic_write_json(Path(directory) / RECORD_NAME, {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "files": self.files,
        })


def load_record(directory: Path) -> RunArtifact | None:
    p = Path(directory) / RECORD_NAME
    if not p.exists():
        return None
    d = json.loads(p.read_text())
    return RunArtifact(run_id=d["run_id"], config_digest=d["config_digest"],
                       files=d["files"])


def verify_record(record: RunArtifact, base: Path) -> bool:
    """Every referenced file must exist and hash to its recorded value."""
    base = Path(base)
    for meta in record.files.values():
        p = base / meta["path"]
        if meta.get("tree"):
            if not p.is_dir():
                return False
            h = hashlib.sha256()
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    h.update(str(f.relative_to(p)).encode())
                    h.update(file_sha256(f).encode())
            if h.hexdigest() != meta["sha256"]:
                return False
        else:
            if not p.is_file() or file_sha256(p) != meta["sha256"]:
                return False
    return True


def is_complete(directory: Path, config_digest: str) -> bool:
    """True when a prior run with this digest left verified outputs here."""
    record = load_record(directory)
    if record is None or record.config_digest != config_digest:
        return False
    return verify_record(record, directory)


def digest_obj(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]
