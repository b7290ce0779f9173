"""Run manifests: config snapshot, input/output digests, tool version."""
from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)      # path -> sha256
    outputs: dict = field(default_factory=dict)     # file name (relative to run dir) -> sha256
    seed: int | None = None
    version: str = __version__
    created_utc: str = ""
    finished_utc: str = ""
    python: str = platform.python_version()
    status: str = "ok"
    exit_code: int = 0

    def record_input(self, path) -> None:
        p = Path(path)
        self.inputs[str(p.resolve())] = sha256_file(p)

    def verify_inputs(self) -> list[str]:
        """Paths whose current digest differs from the recorded one."""
        bad = []
        for p, d in self.inputs.items():
            if not Path(p).exists() or sha256_file(p) != d:
                bad.append(p)
        return bad

    def record_outputs(self, run_dir) -> None:
        run_dir = Path(run_dir)
        self.outputs = {str(p.relative_to(run_dir)): sha256_file(p)
                        for p in sorted(run_dir.rglob("*")) if p.is_file() and p.name != MANIFEST_NAME}

    def to_json(self) -> dict:
        return {"tool": "gyroidhx", "version": self.version, "command": self.command, "config": self.config,
                "inputs": self.inputs, "outputs": self.outputs, "seed": self.seed,
                "created_utc": self.created_utc, "finished_utc": self.finished_utc, "python": self.python,
                "status": self.status, "exit_code": self.exit_code}

    @classmethod
    def from_json(cls, d: dict) -> "RunManifest":
        return cls(d["command"], d["config"], d.get("inputs", {}), d.get("outputs", {}), d.get("seed"),
                   d.get("version", __version__), d.get("created_utc", ""), d.get("finished_utc", ""),
                   d.get("python", ""), d.get("status", "ok"), d.get("exit_code", 0))

    def save(self, run_dir) -> Path:
        p = Path(run_dir) / MANIFEST_NAME
        p.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        return p

    @classmethod
    def load(cls, path) -> "RunManifest":
        p = Path(path)
        if p.is_dir():
            p = p / MANIFEST_NAME
        return cls.from_json(json.loads(p.read_text()))


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")
