"""Reproducibility manifests for batch runs."""

from __future__ import annotations

import hashlib
import json
import time

TOOLKIT_VERSION = "0.1.0"


def canonical_json(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def file_digest(path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()


def build_manifest(subcommand: str, config: dict, master_seed: int,
                   outputs: dict, wall_seconds: float, extra: dict | None = None) -> dict:
    manifest = {
        "toolkit_version": TOOLKIT_VERSION,
        "subcommand": subcommand,
        "created_unix": time.time(),
        "master_seed": master_seed,
        "config": config,
        "config_sha256": config_digest(config),
        "wall_seconds": wall_seconds,
        "outputs": {str(p): file_digest(p) for p in outputs},
    }
    if extra:
        manifest["parameters"] = extra
    return manifest


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
