"""Grammar for grounded responses.

A grounded response interleaves plain text with entity groups of the form
``<p>phrase<SEG></p>``: the phrase names a groundable entity and the seg
marker reserves one mask slot.  Slots are numbered 0, 1, 2, ... in order of
appearance.  Phrases are kept verbatim (no trimming) and may not contain any
of the three marker strings.  Nesting is rejected.

Canonical grammar (strict mode)::

    response := (plain | "<p>" phrase "<SEG>" "</p>")*

Lenient mode additionally accepts ``<p>phrase</p><SEG>`` (seg marker directly
after the close tag, a common drift in model output) and normalizes it to the
canonical placement.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Union

P_OPEN = "<p>"
P_CLOSE = "</p>"
SEG = "<SEG>"
MARKERS = (P_OPEN, P_CLOSE, SEG)

_MARKER_RE = re.compile(r"</p>|<p>|<SEG>")


class DiagnosticKind(enum.Enum):
    UNBALANCED_TAG = "UnbalancedTag"
    SEG_OUTSIDE_PHRASE = "SegOutsidePhrase"
    NESTED_PHRASE = "NestedPhrase"
    EMPTY_PHRASE = "EmptyPhrase"
    STRAY_MARKER = "StrayMarker"


# Kinds that abort even in lenient mode.
_LENIENT_ABORTS = frozenset(
    {DiagnosticKind.UNBALANCED_TAG, DiagnosticKind.NESTED_PHRASE}
)


@dataclass(frozen=True)
class ParseDiagnostic:
    kind: DiagnosticKind
    byte_offset: int

    def __str__(self) -> str:
        return f"{self.kind.value}@{self.byte_offset}"


class GroundedParseError(ValueError):
    """Raised when parsing aborts; carries the full diagnostic list."""

    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


@dataclass(frozen=True)
class Entity:
    """One ``<p>phrase<SEG></p>`` group bound to mask slot ``slot``."""

    phrase: str
    slot: int

    def __post_init__(self):
        if not self.phrase:
            raise ValueError("entity phrase must be non-empty")
        for marker in MARKERS:
            if marker in self.phrase:
                raise ValueError(f"entity phrase may not contain {marker!r}")
        if self.slot < 0:
            raise ValueError("slot must be non-negative")


Segment = Union[str, Entity]


@dataclass(frozen=True)
class GroundedResponse:
    """Parsed response: ordered plain/entity segments plus the entity count."""

    segments: tuple[Segment, ...]
    entity_count: int = field(init=False)

    def __post_init__(self):
        count = 0
        prev_plain = False
        for seg in self.segments:
            if isinstance(seg, Entity):
                if seg.slot != count:
                    raise ValueError(
                        f"slot {seg.slot} out of order; expected {count}"
                    )
                count += 1
                prev_plain = False
            elif isinstance(seg, str):
                if not seg:
                    raise ValueError("plain segments must be non-empty")
                if prev_plain:
                    raise ValueError("adjacent plain segments must be merged")
                for marker in MARKERS:
                    if marker in seg:
                        raise ValueError(
                            f"plain segment may not contain {marker!r}"
                        )
                prev_plain = True
            else:
                raise TypeError(f"segment must be str or Entity, got {type(seg)}")
        object.__setattr__(self, "entity_count", count)

    @classmethod
    def from_parts(cls, parts: Iterable[Segment]) -> "GroundedResponse":
        """Build a response, merging adjacent plain texts, dropping empty ones
        and renumbering entity slots in order of appearance."""
        segments: list[Segment] = []
        slot = 0
        for part in parts:
            if isinstance(part, Entity):
                segments.append(Entity(part.phrase, slot))
                slot += 1
            elif isinstance(part, str):
                if not part:
                    continue
                if segments and isinstance(segments[-1], str):
                    segments[-1] = segments[-1] + part
                else:
                    segments.append(part)
            else:
                raise TypeError(f"segment must be str or Entity, got {type(part)}")
        return cls(tuple(segments))


EMPTY_RESPONSE = GroundedResponse(())


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split into (kind, start, end) tokens; kind is a marker string or 'TEXT'."""
    tokens = []
    pos = 0
    for m in _MARKER_RE.finditer(text):
        if m.start() > pos:
            tokens.append(("TEXT", pos, m.start()))
        tokens.append((m.group(), m.start(), m.end()))
        pos = m.end()
    if pos < len(text):
        tokens.append(("TEXT", pos, len(text)))
    return tokens


def parse_with_diagnostics(
    text: str, lenient: bool = False
) -> tuple[GroundedResponse, list[ParseDiagnostic]]:
    """Scan ``text`` once, returning a best-effort response and every diagnostic.

    The response is only meaningful when no mode-aborting diagnostic was
    recorded; :func:`parse_grounded` applies that policy.  Recovery rules for
    non-aborting diagnostics: stray seg markers are dropped, empty phrases are
    dropped, and a phrase with no seg marker at all is demoted to plain text.
    """
    diags: list[ParseDiagnostic] = []
    parts: list[Segment] = []
    tokens = _tokenize(text)

    phrase_open: int | None = None  # start index of the open <p>, or None
    phrase_buf: list[str] = []
    seg_seen = False
    seg_start = -1

    def diag(kind: DiagnosticKind, index: int) -> None:
        diags.append(ParseDiagnostic(kind, _byte_offset(text, index)))

    def close_entity() -> None:
        nonlocal phrase_open, seg_seen
        phrase = "".join(phrase_buf)
        if phrase:
            parts.append(Entity(phrase, 0))  # slot renumbered by from_parts
        else:
            diag(DiagnosticKind.EMPTY_PHRASE, phrase_open)
        phrase_open = None
        phrase_buf.clear()
        seg_seen = False

    def demote_to_plain() -> None:
        nonlocal phrase_open, seg_seen
        parts.append("".join(phrase_buf))
        phrase_open = None
        phrase_buf.clear()
        seg_seen = False

    i = 0
    n = len(tokens)
    while i < n:
        kind, start, end = tokens[i]
        if phrase_open is None:
            if kind == "TEXT":
                parts.append(text[start:end])
            elif kind == P_OPEN:
                phrase_open = start
            elif kind == SEG:
                # Seg marker with no enclosing phrase: rejected, dropped.
                diag(DiagnosticKind.STRAY_MARKER, start)
            else:  # P_CLOSE
                diag(DiagnosticKind.UNBALANCED_TAG, start)
        else:
            if kind == "TEXT":
                if seg_seen:
                    # Seg marker was not terminal; drop it, keep the phrase going.
                    diag(DiagnosticKind.STRAY_MARKER, seg_start)
                    seg_seen = False
                phrase_buf.append(text[start:end])
            elif kind == P_OPEN:
                diag(DiagnosticKind.NESTED_PHRASE, start)
            elif kind == SEG:
                if seg_seen:
                    diag(DiagnosticKind.STRAY_MARKER, start)
                else:
                    seg_seen = True
                    seg_start = start
            else:  # P_CLOSE
                if seg_seen:
                    close_entity()
                else:
                    # No interior seg: lenient mode accepts one directly after
                    # the close tag; anything else leaves the group seg-less.
                    follows_seg = (
                        i + 1 < n
                        and tokens[i + 1][0] == SEG
                        and tokens[i + 1][1] == end
                    )
                    if follows_seg:
                        if not lenient:
                            diag(DiagnosticKind.SEG_OUTSIDE_PHRASE, tokens[i + 1][1])
                        i += 1  # consume the seg marker
                        seg_seen = True
                        close_entity()
                    else:
                        diag(DiagnosticKind.SEG_OUTSIDE_PHRASE, start)
                        demote_to_plain()
        i += 1

    if phrase_open is not None:
        diag(DiagnosticKind.UNBALANCED_TAG, phrase_open)
        demote_to_plain()

    return GroundedResponse.from_parts(parts), diags


def parse_grounded(text: str, lenient: bool = False) -> GroundedResponse:
    """Parse ``text`` into a :class:`GroundedResponse`.

    Strict mode aborts on any diagnostic; lenient mode aborts only on
    UnbalancedTag and NestedPhrase and recovers from the rest.  Raises
    :class:`GroundedParseError` carrying the full diagnostic list.
    """
    resp, diags = parse_with_diagnostics(text, lenient=lenient)
    if lenient:
        aborting = [d for d in diags if d.kind in _LENIENT_ABORTS]
    else:
        aborting = diags
    if aborting:
        raise GroundedParseError(diags)
    return resp


def serialize(resp: GroundedResponse) -> str:
    """Emit the canonical wire form; inverse of strict parsing."""
    out = []
    for seg in resp.segments:
        if isinstance(seg, Entity):
            out.append(f"{P_OPEN}{seg.phrase}{SEG}{P_CLOSE}")
        else:
            out.append(seg)
    return "".join(out)


def strip_markup(resp: GroundedResponse) -> str:
    """Plain-text projection: phrases kept in place, markers removed."""
    return "".join(
        seg.phrase if isinstance(seg, Entity) else seg for seg in resp.segments
    )


def extract_entities(resp: GroundedResponse) -> list[tuple[str, int]]:
    """(phrase, slot) pairs in order of appearance."""
    return [
        (seg.phrase, seg.slot) for seg in resp.segments if isinstance(seg, Entity)
    ]
