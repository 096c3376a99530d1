"""Run manifests: resolved parameters, seeds and content hashes for every CLI run."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
from pathlib import Path

from . import __version__

MANIFEST_SUFFIX = ".manifest.json"


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def code_hash() -> str:
    """Content hash over the package's Python sources (path + bytes, sorted)."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def manifest_path(out_path) -> Path:
    return Path(str(out_path) + MANIFEST_SUFFIX)


def build_manifest(subcommand: str, params: dict, inputs: dict, outputs: dict, extra: dict | None = None) -> dict:
    return {
        "subcommand": subcommand,
        "params": params,
        "seed": params.get("seed"),
        "inputs": {k: {"path": str(p), "sha256": file_hash(p)} for k, p in inputs.items() if p},
        "outputs": {k: {"path": str(p), "sha256": file_hash(p)} for k, p in outputs.items() if p},
        "tool_version": __version__,
        "code_hash": code_hash(),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        **(extra or {}),
    }


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
