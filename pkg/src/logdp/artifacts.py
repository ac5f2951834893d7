"""Canonical serialization helpers shared by every on-disk artifact."""

import hashlib
import json
from pathlib import Path
from typing import Iterable


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    """Content hash of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_jsonl(path: Path | str, records: Iterable[dict]) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path: Path | str) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"artifact not found: {path}")
    with path.open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def file_digest(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
