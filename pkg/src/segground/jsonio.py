"""Newline-terminated JSONL with stable key order and atomic file writes.

Records are serialized in insertion order (never ``sort_keys``) so emitted
files diff cleanly; writers go through a temp file in the same directory and
rename, so re-running a command never mutates an existing output in place.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator


def dumps_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)


def write_text_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_jsonl(path, records: Iterable[dict]) -> Path:
    lines = [dumps_record(r) + "\n" for r in records]
    return write_text_atomic(path, "".join(lines))


def write_json(path, payload) -> Path:
    return write_text_atomic(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


def read_jsonl(path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
