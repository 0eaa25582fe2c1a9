"""Dataset construction: template samples (P1/P2), provider-backed Q&A
samples (P3/P4), splits, and the training mixer.

Input manifest: JSONL, one record per image::

    {"id": "img001", "image": "images/img001.png", "modality": "CT",
     "masks": [{"label": "heart", "rle": {"h": 24, "w": 24, "runs": [...]}}]}

Output samples use the same RLE record for masks and carry the gold response
in canonical marked-up form.  All randomness flows from per-sample seeds
derived from (run seed, sample id), so forging is order-independent and
byte-reproducible.
"""

from __future__ import annotations

import enum
import hashlib
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import templates
from .errors import (
    BadRatiosError,
    EmptyMaskError,
    EmptySourceError,
    ManifestError,
    ProviderError,
    UngroundableAnswerError,
)
from .grounded_text import (
    MARKERS,
    GroundedResponse,
    parse_grounded,
    serialize,
)
from .jsonio import read_jsonl, write_jsonl
from .knowledge import KnowledgeBase
from .masks import (
    BinaryMask,
    Box,
    Point,
    bbox_of,
    mask_from_wire,
    mask_to_wire,
    mask_union,
    sample_point,
)
from .prompts import DEFAULT_IN_CONTEXT_EXAMPLES, GenerationPrompt, build_generation_prompt
from .provider import CompletionProvider


class Modality(str, enum.Enum):
    CT = "CT"
    MRI = "MRI"
    DERMOSCOPY = "Dermoscopy"
    PET = "PET"
    ENDOSCOPY = "Endoscopy"
    XRAY = "X-Ray"
    ULTRASOUND = "Ultrasound"
    FUNDUS = "Fundus"


class Perspective(str, enum.Enum):
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"


QA_PERSPECTIVES = (Perspective.P3, Perspective.P4)
PROMPTED_PERSPECTIVES = (Perspective.P2, Perspective.P4)


@dataclass(frozen=True)
class Sample:
    """One dataset record; the schema invariants hold by construction."""

    id: str
    image_ref: str
    modality: Modality
    perspective: Perspective
    query: str
    visual_prompt: Point | Box | None
    gold: GroundedResponse
    gold_masks: tuple[BinaryMask, ...]

    def __post_init__(self):
        needs_prompt = self.perspective in PROMPTED_PERSPECTIVES
        if needs_prompt and self.visual_prompt is None:
            raise ValueError(f"{self.perspective.value} sample requires a visual prompt")
        if not needs_prompt and self.visual_prompt is not None:
            raise ValueError(f"{self.perspective.value} sample must not carry a visual prompt")
        if len(self.gold_masks) != self.gold.entity_count:
            raise ValueError(
                f"{len(self.gold_masks)} masks for {self.gold.entity_count} entities"
            )


def _prompt_to_record(prompt: Point | Box | None) -> dict | None:
    if prompt is None:
        return None
    if isinstance(prompt, Point):
        return {"kind": "point", "x": prompt.x, "y": prompt.y}
    return {
        "kind": "box",
        "x_min": prompt.x_min,
        "y_min": prompt.y_min,
        "x_max": prompt.x_max,
        "y_max": prompt.y_max,
    }


def _prompt_from_record(record: dict | None) -> Point | Box | None:
    if record is None:
        return None
    if record.get("kind") == "point":
        return Point(x=record["x"], y=record["y"])
    if record.get("kind") == "box":
        return Box(
            x_min=record["x_min"],
            y_min=record["y_min"],
            x_max=record["x_max"],
            y_max=record["y_max"],
        )
    raise ManifestError(f"bad visual prompt record: {record!r}")


def sample_to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "image": sample.image_ref,
        "modality": sample.modality.value,
        "perspective": sample.perspective.value,
        "query": sample.query,
        "visual_prompt": _prompt_to_record(sample.visual_prompt),
        "gold": serialize(sample.gold),
        "gold_masks": [mask_to_wire(m) for m in sample.gold_masks],
    }


def sample_from_record(record: dict) -> Sample:
    try:
        return Sample(
            id=record["id"],
            image_ref=record["image"],
            modality=Modality(record["modality"]),
            perspective=Perspective(record["perspective"]),
            query=record["query"],
            visual_prompt=_prompt_from_record(record.get("visual_prompt")),
            gold=parse_grounded(record["gold"]),
            gold_masks=tuple(mask_from_wire(m) for m in record["gold_masks"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"bad sample record {record.get('id', '?')!r}: {exc}") from exc


def read_samples(path) -> list[Sample]:
    return [sample_from_record(r) for r in read_jsonl(path)]


def write_samples(path, samples: Iterable[Sample]):
    return write_jsonl(path, (sample_to_record(s) for s in samples))


@dataclass(frozen=True)
class ManifestRecord:
    """One image with its labeled gold masks."""

    id: str
    image: str
    modality: Modality
    masks: tuple[tuple[str, BinaryMask], ...]

    def labels(self) -> list[str]:
        return [label for label, _ in self.masks]


def manifest_record_from_dict(record: dict) -> ManifestRecord:
    try:
        masks = tuple(
            (entry["label"], mask_from_wire(entry["rle"])) for entry in record["masks"]
        )
        return ManifestRecord(
            id=record["id"],
            image=record["image"],
            modality=Modality(record["modality"]),
            masks=masks,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ManifestError(f"bad manifest record {record.get('id', '?')!r}: {exc}") from exc


def read_manifest(path) -> list[ManifestRecord]:
    records = [manifest_record_from_dict(r) for r in read_jsonl(path)]
    if not records:
        return records
    seen = set()
    for record in records:
        if record.id in seen:
            raise ManifestError(f"duplicate manifest id {record.id!r}")
        seen.add(record.id)
    return records


def derive_seed(run_seed: int, sample_id: str) -> int:
    """Per-sample seed: first 8 bytes of sha256("{run_seed}:{sample_id}")."""
    digest = hashlib.sha256(f"{run_seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def make_p1_sample(
    image_ref: str,
    labeled_masks: Sequence[tuple[str, BinaryMask]],
    rng_seed: int,
    *,
    sample_id: str,
    modality: Modality,
    instruction_index: int | None = None,
    response_index: int | None = None,
) -> Sample:
    """Language-guided segmentation sample from instruction/response templates."""
    if not labeled_masks:
        raise ValueError("need at least one labeled mask")
    labels = [label for label, _ in labeled_masks]
    rng = random.Random(rng_seed)
    if instruction_index is None:
        instruction_index = rng.randrange(len(templates.P1_INSTRUCTIONS))
    responses = (
        templates.P1_RESPONSES_MULTI if len(labels) > 1 else templates.P1_RESPONSES_SINGLE
    )
    if response_index is None:
        response_index = rng.randrange(len(responses))
    query = templates.fill(
        templates.P1_INSTRUCTIONS[instruction_index], templates.join_labels(labels)
    )
    gold_text = templates.fill(
        responses[response_index], templates.join_wrapped_labels(labels)
    )
    return Sample(
        id=sample_id,
        image_ref=image_ref,
        modality=modality,
        perspective=Perspective.P1,
        query=query,
        visual_prompt=None,
        gold=parse_grounded(gold_text),
        gold_masks=tuple(mask for _, mask in labeled_masks),
    )


def make_p2_sample(
    image_ref: str,
    labeled_masks: Sequence[tuple[str, BinaryMask]],
    prompt_kind: str,
    rng_seed: int,
    *,
    sample_id: str,
    modality: Modality,
    instruction_index: int | None = None,
    response_index: int | None = None,
) -> Sample:
    """Visual-prompt sample: box prompts cover the union of all labels,
    point prompts target one label chosen by the seed."""
    if not labeled_masks:
        raise ValueError("need at least one labeled mask")
    if prompt_kind not in ("box", "point"):
        raise ValueError(f"prompt_kind must be 'box' or 'point', got {prompt_kind!r}")
    rng = random.Random(rng_seed)

    if prompt_kind == "box":
        instructions = templates.P2_BOX_INSTRUCTIONS
        responses = templates.P2_BOX_RESPONSES
        targets = list(labeled_masks)
        union = mask_union([mask for _, mask in targets])
        if union.is_empty():
            raise EmptyMaskError("all target masks are empty")
        prompt: Point | Box = bbox_of(union)
    else:
        instructions = templates.P2_POINT_INSTRUCTIONS
        responses = templates.P2_POINT_RESPONSES
        candidates = [(label, mask) for label, mask in labeled_masks if not mask.is_empty()]
        if not candidates:
            raise EmptyMaskError("all target masks are empty")
        targets = [candidates[rng.randrange(len(candidates))]]
        prompt = sample_point(targets[0][1], rng.randrange(2**32))

    if instruction_index is None:
        instruction_index = rng.randrange(len(instructions))
    if response_index is None:
        response_index = rng.randrange(len(responses))

    labels = [label for label, _ in targets]
    gold_text = templates.fill(
        responses[response_index], templates.join_wrapped_labels(labels)
    )
    return Sample(
        id=sample_id,
        image_ref=image_ref,
        modality=modality,
        perspective=Perspective.P2,
        query=instructions[instruction_index],
        visual_prompt=prompt,
        gold=parse_grounded(gold_text),
        gold_masks=tuple(mask for _, mask in targets),
    )


def wrap_labels_in_text(text: str, labels: Sequence[str]) -> tuple[str, list[str]]:
    """Wrap every occurrence of a known label in grounded markup.

    Longest match wins at each position; matching is case-insensitive and
    word-bounded.  Marker strings already present in the raw text are removed
    first so the result always strict-parses.  Returns the marked-up text and
    the matched canonical labels in occurrence order.
    """
    for marker in MARKERS:
        text = text.replace(marker, "")
    spans: list[tuple[int, int, str]] = []
    for label in labels:
        pattern = re.compile(rf"(?<!\w){re.escape(label)}(?!\w)", re.IGNORECASE)
        for m in pattern.finditer(text):
            spans.append((m.start(), m.end(), label))
    spans.sort(key=lambda s: (s[0], -(s[1] - s[0])))
    chosen: list[tuple[int, int, str]] = []
    cursor = 0
    for start, end, label in spans:
        if start >= cursor:
            chosen.append((start, end, label))
            cursor = end
    out = []
    pos = 0
    matched: list[str] = []
    for start, end, label in chosen:
        out.append(text[pos:start])
        out.append(templates.wrap_label(text[start:end]))
        matched.append(label)
        pos = end
    out.append(text[pos:])
    return "".join(out), matched


_QA_RE = re.compile(r"Question:\s*(?P<q>.*?)\s*Answer:\s*(?P<a>.*)\s*$", re.DOTALL)


def generate_qa(
    prompt: GenerationPrompt, provider: CompletionProvider
) -> tuple[str, str]:
    """Run the provider and ground its answer against the prompt's labels.

    Returns (question, marked-up answer); the answer is guaranteed to
    strict-parse.  Raises UngroundableAnswerError when the answer mentions no
    known label, ProviderError when the provider gives up.
    """
    completion = provider.complete(prompt.text)
    m = _QA_RE.search(completion)
    if m is None:
        raise UngroundableAnswerError(
            f"completion has no Question:/Answer: sections: {completion[:120]!r}"
        )
    question = " ".join(m.group("q").split())
    answer = " ".join(m.group("a").split())
    grounded, matched = wrap_labels_in_text(answer, prompt.labels)
    if not matched:
        raise UngroundableAnswerError(
            f"answer mentions none of {list(prompt.labels)}: {answer[:120]!r}"
        )
    parse_grounded(grounded)  # must hold by construction
    return question, grounded


def make_qa_sample(
    record: ManifestRecord,
    perspective: Perspective,
    kb: KnowledgeBase,
    provider: CompletionProvider,
    rng_seed: int,
    *,
    sample_id: str,
    strict_knowledge: bool = True,
    examples=DEFAULT_IN_CONTEXT_EXAMPLES,
) -> Sample:
    """Provider-backed Q&A sample for P3 (no visual prompt) or P4 (box)."""
    if perspective not in QA_PERSPECTIVES:
        raise ValueError(f"perspective must be P3 or P4, got {perspective!r}")
    prompt = build_generation_prompt(
        perspective.value,
        record.labels(),
        kb,
        examples=examples,
        rng_seed=rng_seed,
        strict=strict_knowledge,
    )
    question, grounded_answer = generate_qa(prompt, provider)
    gold = parse_grounded(grounded_answer)
    # Each entity phrase is a case variant of exactly one manifest label
    # (the wrapper only wraps known labels), so masks resolve by casefold.
    mask_by_label = {label.casefold(): mask for label, mask in record.masks}
    gold_masks = []
    for segment in gold.segments:
        if isinstance(segment, str):
            continue
        key = segment.phrase.casefold()
        if key not in mask_by_label:
            raise UngroundableAnswerError(f"no mask for phrase {segment.phrase!r}")
        gold_masks.append(mask_by_label[key])
    visual_prompt = None
    if perspective is Perspective.P4:
        visual_prompt = bbox_of(mask_union(gold_masks))
    return Sample(
        id=sample_id,
        image_ref=record.image,
        modality=record.modality,
        perspective=perspective,
        query=question,
        visual_prompt=visual_prompt,
        gold=gold,
        gold_masks=tuple(gold_masks),
    )


def split(
    samples: Sequence,
    ratios: tuple[float, float, float] = (0.99, 0.005, 0.005),
    rng_seed: int = 0,
    exclude_ids: set[str] | None = None,
) -> tuple[list, list, list]:
    """Deterministic (train, val, test) partition.

    ``|val| = round(r_val * n)`` and ``|test| = round(r_test * n)`` with
    half-up rounding; the remainder is train.  Samples whose id is in
    ``exclude_ids`` are barred from val/test and stay in train.
    """
    ratios = tuple(ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios must be three non-negative values summing to 1: {ratios}")
    samples = list(samples)
    if not samples:
        raise BadRatiosError("cannot split zero samples")
    n = len(samples)
    n_val = int(ratios[1] * n + 0.5)
    n_test = int(ratios[2] * n + 0.5)
    if n_val + n_test > n:
        raise BadRatiosError(f"val+test ({n_val}+{n_test}) exceeds population {n}")
    order = list(range(n))
    random.Random(rng_seed).shuffle(order)
    excluded = exclude_ids or set()

    val: list = []
    test: list = []
    train_idx: list[int] = []
    for idx in order:
        sample = samples[idx]
        sid = getattr(sample, "id", None)
        blocked = sid is not None and sid in excluded
        if len(val) < n_val and not blocked:
            val.append(sample)
        elif len(test) < n_test and not blocked:
            test.append(sample)
        else:
            train_idx.append(idx)
    train = [samples[i] for i in sorted(train_idx)]
    return train, val, test


def mix(
    streams: Sequence[Sequence],
    weights: Sequence[float] = (1, 2, 2, 1, 1),
    rng_seed: int = 0,
    count: int = 0,
) -> list:
    """Draw ``count`` samples, picking source i with probability w_i/sum(w).

    Exhausted sources cycle back to their start.  Sources with zero weight
    may be empty; an empty source with positive weight raises.
    """
    streams = [list(s) for s in streams]
    weights = [float(w) for w in weights]
    if len(weights) != len(streams):
        raise ValueError(f"{len(weights)} weights for {len(streams)} sources")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError(f"weights must be non-negative with a positive sum: {weights}")
    for i, (stream, weight) in enumerate(zip(streams, weights)):
        if weight > 0 and not stream:
            raise EmptySourceError(f"source {i} is empty but has weight {weight}")
    rng = random.Random(rng_seed)
    cursors = [0] * len(streams)
    picks = rng.choices(range(len(streams)), weights=weights, k=count)
    out = []
    for source in picks:
        stream = streams[source]
        out.append(stream[cursors[source] % len(stream)])
        cursors[source] += 1
    return out


@dataclass
class ForgeResult:
    """Samples per perspective plus a log of skipped (record, reason) pairs."""

    samples: dict[Perspective, list[Sample]]
    skipped: list[dict]

    def all_samples(self) -> list[Sample]:
        out = []
        for perspective in Perspective:
            out.extend(self.samples.get(perspective, []))
        return out


def _build_for_record(
    record: ManifestRecord,
    perspective: Perspective,
    run_seed: int,
    kb: KnowledgeBase | None,
    provider: CompletionProvider | None,
    strict_knowledge: bool,
) -> Sample:
    sample_id = f"{record.id}:{perspective.value}"
    seed = derive_seed(run_seed, sample_id)
    if perspective is Perspective.P1:
        return make_p1_sample(
            record.image,
            record.masks,
            seed,
            sample_id=sample_id,
            modality=record.modality,
        )
    if perspective is Perspective.P2:
        kind = random.Random(seed).choice(("box", "point"))
        return make_p2_sample(
            record.image,
            record.masks,
            kind,
            seed,
            sample_id=sample_id,
            modality=record.modality,
        )
    if kb is None or provider is None:
        raise ValueError(f"{perspective.value} needs a knowledge base and a provider")
    return make_qa_sample(
        record,
        perspective,
        kb,
        provider,
        seed,
        sample_id=sample_id,
        strict_knowledge=strict_knowledge,
    )


def forge_dataset(
    records: Sequence[ManifestRecord],
    perspectives: Sequence[Perspective],
    run_seed: int = 0,
    kb: KnowledgeBase | None = None,
    provider: CompletionProvider | None = None,
    strict_knowledge: bool = True,
    workers: int = 1,
) -> ForgeResult:
    """Construct samples for every (record, perspective) pair.

    Per-sample failures (empty masks, provider errors after retries,
    ungroundable answers) are skipped and logged; unknown knowledge labels in
    strict mode propagate.  Output order follows the manifest regardless of
    worker count.
    """
    tasks = [(record, perspective) for perspective in perspectives for record in records]

    def build(task):
        record, perspective = task
        try:
            return perspective, _build_for_record(
                record, perspective, run_seed, kb, provider, strict_knowledge
            ), None
        except (EmptyMaskError, ProviderError, UngroundableAnswerError) as exc:
            return perspective, None, {
                "id": f"{record.id}:{perspective.value}",
                "error": type(exc).__name__,
                "detail": str(exc),
            }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, tasks))
    else:
        results = [build(task) for task in tasks]

    samples: dict[Perspective, list[Sample]] = {p: [] for p in perspectives}
    skipped: list[dict] = []
    for perspective, sample, problem in results:
        if sample is not None:
            samples[perspective].append(sample)
        else:
            skipped.append(problem)
    return ForgeResult(samples=samples, skipped=skipped)


def validate_samples(samples: Iterable[Sample]) -> list[str]:
    """Pipeline-wide validator: every gold strict-parses after a round trip
    and the schema invariants hold.  Returns a list of problems."""
    problems = []
    for sample in samples:
        try:
            reparsed = parse_grounded(serialize(sample.gold))
            if reparsed != sample.gold:
                problems.append(f"{sample.id}: gold does not round-trip")
        except Exception as exc:  # noqa: BLE001 - collect, do not raise
            problems.append(f"{sample.id}: gold does not strict-parse: {exc}")
        needs_prompt = sample.perspective in PROMPTED_PERSPECTIVES
        if needs_prompt != (sample.visual_prompt is not None):
            problems.append(f"{sample.id}: visual prompt violates the perspective rule")
        if len(sample.gold_masks) != sample.gold.entity_count:
            problems.append(f"{sample.id}: mask count != entity count")
    return problems
