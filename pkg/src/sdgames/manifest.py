"""Run manifests: resolved config, seed, and content digests of every output.

Output files are written atomically and contain no timestamps, so a rerun of
the same command with the same inputs produces byte-identical files; the
manifest records their sha256 digests (its own timestamps are metadata, not
part of any digest).
"""

from __future__ import annotations

import datetime
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version


def tool_version() -> str:
    try:
        return version("sdgames")
    except PackageNotFoundError:
        return "0.dev"


def canonical_json(payload) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats, newline-terminated."""
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _sanitize(obj):
    """Make numpy scalars/arrays and non-finite floats JSON-safe."""
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float):
        if obj != obj:
            return "nan"
        if obj in (float("inf"), float("-inf")):
            return "inf" if obj > 0 else "-inf"
    return obj


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    seed: int | None
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    backend: str = ""
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "argv": list(self.argv),
            "config": _sanitize(self.config),
            "seed": self.seed,
            "tool_version": tool_version(),
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
            "backend": self.backend,
            "workers": self.workers,
        }


class OutputWriter:
    """Collects output files, writes them atomically, removes partials on failure."""

    def __init__(self, out_dir: str, command: str, argv, config: dict, seed: int | None):
        from . import _kernels

        self.out_dir = out_dir
        self.manifest = RunManifest(
            command=command,
            argv=list(argv),
            config=config,
            seed=seed,
            started=datetime.datetime.now(datetime.timezone.utc).isoformat(),
            backend=_kernels.BACKEND,
            workers=int(os.environ.get("SDGAMES_WORKERS", "1")),
        )
        self._pending: list[tuple[str, str]] = []

    def add_text(self, filename: str, text: str):
        self._pending.append((filename, text))

    def add_json(self, filename: str, payload):
        self.add_text(filename, canonical_json(_sanitize(payload)))

    def abort(self):
        self._pending.clear()

    def commit(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        written = []
        try:
            for filename, text in self._pending:
                path = os.path.join(self.out_dir, filename)
                tmp = path + ".tmp"
                with open(tmp, "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
                os.replace(tmp, path)
                written.append(path)
                self.manifest.outputs.append(
                    {
                        "path": filename,
                        "sha256": sha256_file(path),
                        "bytes": os.path.getsize(path),
                    }
                )
        except Exception:
            for path in written:
                try:
                    os.unlink(path)
                except OSError:
                    pass
            raise
        self.manifest.finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
        mpath = os.path.join(self.out_dir, "manifest.json")
        with open(mpath, "w", encoding="utf-8", newline="") as fh:
            fh.write(canonical_json(self.manifest.to_dict()))
        return mpath


def verify_manifest(path: str) -> dict:
    """Re-hash the outputs listed in a manifest and report digest matches."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    rows = []
    all_ok = True
    for entry in data.get("outputs", []):
        fpath = os.path.join(base, entry["path"])
        exists = os.path.exists(fpath)
        digest = sha256_file(fpath) if exists else None
        ok = exists and digest == entry["sha256"]
        all_ok &= ok
        rows.append(
            {"path": entry["path"], "expected": entry["sha256"], "actual": digest, "ok": ok}
        )
    return {
        "manifest": path,
        "command": data.get("command"),
        "tool_version": data.get("tool_version"),
        "all_ok": all_ok,
        "outputs": rows,
    }
