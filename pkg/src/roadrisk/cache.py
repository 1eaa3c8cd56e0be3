"""Content-addressed caching for pipeline stages.

Each stage output lives at <cache_root>/<stage>/<hash>/ holding one payload
file plus manifest.json. The hash covers the stage's configuration and the
digests of everything it consumed, so editing config or inputs naturally
invalidates downstream entries. Writes go to a temp directory and are swapped
in atomically; corrupt entries (checksum mismatch, unreadable payload) are
recomputed with a warning rather than failing the run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Generic, Mapping, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")


def key_hash(key: Mapping[str, Any]) -> str:
    """Stable hex digest of a JSON-serializable stage key."""
    canonical = json.dumps(key, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def file_sha256(path: Path | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class StageResult(Generic[T]):
    value: T
    hit: bool
    entry_dir: Path
    entry_hash: str


def load_stage(
    cache_root: Path | str,
    stage: str,
    key: Mapping[str, Any],
    reader: Callable[[Path], T],
    payload_name: str = "data.csv",
) -> StageResult[T] | None:
    """Load an existing stage entry, or None when absent or corrupt."""
    h = key_hash(key)
    entry_dir = Path(cache_root) / stage / h
    manifest_path = entry_dir / "manifest.json"
    payload_path = entry_dir / payload_name
    if not manifest_path.exists():
        return None
    try:
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("payload") != payload_name:
            raise ValueError("manifest payload name mismatch")
        actual = file_sha256(payload_path)
        if actual != manifest.get("sha256"):
            raise ValueError(
                f"payload checksum mismatch (manifest {manifest.get('sha256')}, file {actual})"
            )
        value = reader(payload_path)
        return StageResult(value=value, hit=True, entry_dir=entry_dir, entry_hash=h)
    except Exception as exc:  # noqa: BLE001 - any corruption means a miss
        log.warning("cache entry %s/%s corrupt (%s); ignoring it", stage, h, exc)
        return None


def cache_stage(
    cache_root: Path | str,
    stage: str,
    key: Mapping[str, Any],
    producer: Callable[[], T],
    writer: Callable[[Path, T], None],
    reader: Callable[[Path], T],
    payload_name: str = "data.csv",
) -> StageResult[T]:
    """Return the stage's materialized output, recomputing only on cache miss.

    ``writer(path, value)`` serializes to the payload path; ``reader(path)``
    deserializes. The manifest records the payload checksum, which is
    verified on every hit; corrupt entries are recomputed with a warning.
    """
    cache_root = Path(cache_root)
    h = key_hash(key)
    entry_dir = cache_root / stage / h

    existing = load_stage(cache_root, stage, key, reader, payload_name)
    if existing is not None:
        return existing

    value = producer()
    tmp_dir = cache_root / stage / f".tmp-{h}-{os.getpid()}"
    if tmp_dir.exists():
        shutil.rmtree(tmp_dir)
    tmp_dir.mkdir(parents=True)
    try:
        writer(tmp_dir / payload_name, value)
        manifest = {
            "stage": stage,
            "hash": h,
            "key": dict(key),
            "payload": payload_name,
            "sha256": file_sha256(tmp_dir / payload_name),
            "created_utc": datetime.now(timezone.utc).isoformat(),
        }
        (tmp_dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2, default=str) + "\n"
        )
        if entry_dir.exists():
            shutil.rmtree(entry_dir)
        entry_dir.parent.mkdir(parents=True, exist_ok=True)
        os.replace(tmp_dir, entry_dir)
    finally:
        if tmp_dir.exists():
            shutil.rmtree(tmp_dir, ignore_errors=True)
    return StageResult(value=value, hit=False, entry_dir=entry_dir, entry_hash=h)
