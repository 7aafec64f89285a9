"""
Artifact writing: atomic file replacement, JSON reports and run manifests.
"""

import hashlib
import json
import os
import platform
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from shared.config import RNG_ALGORITHM, VERSION

PathLike = Union[str, Path]


class RunManifest(BaseModel):
    """Provenance record written next to every artifact."""

    command_line: List[str]
    config_path: Optional[str] = None
    config_hash: Optional[str] = None
    seeds: List[int] = Field(default_factory=list)
    rng_algorithm: str = RNG_ALGORITHM
    tool_version: str = VERSION
    python_version: str = Field(default_factory=lambda: platform.python_version())
    started_at: str
    finished_at: Optional[str] = None
    artifacts: List[str] = Field(default_factory=list)


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _json_default(obj: Any):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def to_json_text(payload: Dict[str, Any]) -> str:
    # repr-based float output keeps full round-trip precision
    return json.dumps(payload, indent=2, sort_keys=False, default=_json_default, allow_nan=True) + "\n"


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    return atomic_write_text(path, to_json_text(payload))


def read_json(path: PathLike) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def manifest_path(artifact: PathLike) -> Path:
    artifact = Path(artifact)
    return artifact.with_name(artifact.name + ".manifest.json")


def config_hash(path: PathLike) -> str:
    """sha256 of the raw config bytes; identical bytes give identical hashes."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def start_manifest(config_path: PathLike = None, seeds: List[int] = None, argv: List[str] = None) -> RunManifest:
    digest = None
    if config_path is not None and Path(config_path).exists():
        digest = config_hash(config_path)
    return RunManifest(
        command_line=list(argv if argv is not None else sys.argv),
        config_path=str(config_path) if config_path is not None else None,
        config_hash=digest,
        seeds=list(seeds or []),
        started_at=utc_now(),
    )


def write_manifest(manifest: RunManifest, artifacts: List[PathLike]) -> List[Path]:
    """Finish the manifest and write one copy beside each artifact."""
    manifest = manifest.model_copy(
        update={"finished_at": utc_now(), "artifacts": [str(a) for a in artifacts]}
    )
    written = []
    for artifact in artifacts:
        written.append(write_json(manifest_path(artifact), manifest.model_dump()))
    return written
