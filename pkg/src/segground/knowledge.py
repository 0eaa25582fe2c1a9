"""Label -> curated knowledge paragraph mapping used by the Q&A prompts.

The on-disk format is one JSON file holding an array of entries::

    [{"label": "heart", "text": "...", "source": "wikipedia"}, ...]

``source`` is one of wikipedia/umls/manual and defaults to "manual".  Lookups
are case-insensitive with collapsed whitespace; an empty or whitespace-only
file loads as an empty base.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .errors import DuplicateLabelError, KnowledgeParseError, UnknownLabelError

SOURCES = ("wikipedia", "umls", "manual")


def normalize_label(label: str) -> str:
    return " ".join(label.casefold().split())


@dataclass(frozen=True)
class KnowledgeEntry:
    label: str
    text: str
    source: str = "manual"

    def __post_init__(self):
        if not self.label or not normalize_label(self.label):
            raise ValueError("label must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")


class KnowledgeBase:
    """In-memory knowledge base keyed by normalized label."""

    def __init__(self, entries=()):
        self._entries: dict[str, KnowledgeEntry] = {}
        for entry in entries:
            self.add(entry)

    def add(self, entry: KnowledgeEntry) -> None:
        key = normalize_label(entry.label)
        if key in self._entries:
            raise DuplicateLabelError(f"duplicate label {entry.label!r}")
        self._entries[key] = entry

    def lookup(self, label: str) -> KnowledgeEntry:
        key = normalize_label(label)
        if key not in self._entries:
            raise UnknownLabelError(label)
        return self._entries[key]

    def get(self, label: str) -> KnowledgeEntry | None:
        return self._entries.get(normalize_label(label))

    def labels(self) -> list[str]:
        return [entry.label for entry in self._entries.values()]

    def __contains__(self, label: str) -> bool:
        return normalize_label(label) in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[KnowledgeEntry]:
        return iter(self._entries.values())

    def save(self, path) -> None:
        records = [
            {"label": e.label, "text": e.text, "source": e.source} for e in self
        ]
        Path(path).write_text(
            json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )


def load_knowledge(path) -> KnowledgeBase:
    """Load a knowledge base file; see the module docstring for the schema."""
    raw = Path(path).read_text(encoding="utf-8")
    if not raw.strip():
        return KnowledgeBase()
    try:
        records = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise KnowledgeParseError(f"{path}: {exc}") from exc
    if not isinstance(records, list):
        raise KnowledgeParseError(f"{path}: expected a JSON array of entries")
    base = KnowledgeBase()
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            raise KnowledgeParseError(f"{path}: entry {i} is not an object")
        try:
            entry = KnowledgeEntry(
                label=record["label"],
                text=record["text"],
                source=record.get("source", "manual"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise KnowledgeParseError(f"{path}: entry {i}: {exc}") from exc
        base.add(entry)
    return base
