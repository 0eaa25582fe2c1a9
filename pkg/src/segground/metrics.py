"""Segmentation and grounding metrics with a mergeable accumulator.

AP50 convention (masks carry no confidence scores, so the usual AP curve
degenerates): predictions and golds are matched one-to-one greedily in
descending IoU order; a match counts at IoU >= 0.5; the score is
matched / max(|preds|, |golds|), and the report-level micro average is
sum(matched) / max(sum |preds|, sum |golds|).

Grounding F1: A = predicted entities, B = gold entities, E = size of a
maximum one-to-one matching between entities whose normalized phrases are
equal (lowercase, whitespace collapsed) and whose masks overlap with IoU
strictly above 0.5.  Precision = E/A, recall = E/B, F1 = 2PR/(P+R).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from . import text_metrics
from .errors import ConfigMismatchError, EmptyInputError
from .grounded_text import GroundedResponse
from .masks import BinaryMask, iou


@dataclass(frozen=True)
class GroundedPrediction:
    """A grounded response together with one realized mask per slot."""

    response: GroundedResponse
    masks: tuple[BinaryMask, ...]

    def __post_init__(self):
        if len(self.masks) != self.response.entity_count:
            raise ValueError(
                f"{len(self.masks)} masks for {self.response.entity_count} entities"
            )


def miou(pairs) -> float:
    """Arithmetic mean of per-pair IoU."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError("miou of zero pairs is undefined")
    return sum(iou(p, g) for p, g in pairs) / len(pairs)


def _greedy_match_count(
    preds: list[BinaryMask], golds: list[BinaryMask], threshold: float
) -> int:
    scored = sorted(
        ((iou(p, g), i, j) for i, p in enumerate(preds) for j, g in enumerate(golds)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_pred: set[int] = set()
    used_gold: set[int] = set()
    matched = 0
    for score, i, j in scored:
        if score < threshold:
            break
        if i in used_pred or j in used_gold:
            continue
        used_pred.add(i)
        used_gold.add(j)
        matched += 1
    return matched


def ap50(preds, golds) -> float:
    """Detection-style score at IoU 0.5 for one image; see module docstring."""
    preds = list(preds)
    golds = list(golds)
    if not preds and not golds:
        return 1.0
    if not preds or not golds:
        return 0.0
    matched = _greedy_match_count(preds, golds, 0.5)
    return matched / max(len(preds), len(golds))


def _normalize_phrase(phrase: str) -> str:
    return " ".join(phrase.lower().split())


def _max_matching(adjacency: list[list[int]], n_right: int) -> int:
    """Maximum bipartite matching size via augmenting paths."""
    match_right = [-1] * n_right

    def augment(u: int, seen: list[bool]) -> bool:
        for v in adjacency[u]:
            if seen[v]:
                continue
            seen[v] = True
            if match_right[v] == -1 or augment(match_right[v], seen):
                match_right[v] = u
                return True
        return False

    size = 0
    for u in range(len(adjacency)):
        if augment(u, [False] * n_right):
            size += 1
    return size


def _entity_pairs(pred: GroundedPrediction) -> list[tuple[str, BinaryMask]]:
    phrases = [
        seg.phrase for seg in pred.response.segments if not isinstance(seg, str)
    ]
    return [
        (_normalize_phrase(phrase), mask)
        for phrase, mask in zip(phrases, pred.masks)
    ]


def grounding_counts(
    pred: GroundedPrediction, gold: GroundedPrediction
) -> tuple[int, int, int]:
    """(E, A, B): correct pairs, predicted entities, gold entities."""
    pred_entities = _entity_pairs(pred)
    gold_entities = _entity_pairs(gold)
    adjacency = [
        [
            j
            for j, (g_phrase, g_mask) in enumerate(gold_entities)
            if p_phrase == g_phrase and iou(p_mask, g_mask) > 0.5
        ]
        for p_phrase, p_mask in pred_entities
    ]
    e = _max_matching(adjacency, len(gold_entities))
    return e, len(pred_entities), len(gold_entities)


def grounding_f1(
    pred: GroundedPrediction, gold: GroundedPrediction
) -> tuple[float, float, float]:
    """(precision, recall, f1) of entity/mask pairs; see module docstring."""
    e, a, b = grounding_counts(pred, gold)
    precision = e / a if a else 0.0
    recall = e / b if b else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


DEFAULT_TEXT_METRICS = ("bleu4", "rouge_l", "meteor", "vqa_acc")

_TEXT_FNS = {
    "bleu4": lambda pred, gold: text_metrics.bleu4(pred, [gold]),
    "rouge_l": text_metrics.rouge_l,
    "meteor": text_metrics.meteor_lite,
    "vqa_acc": lambda pred, gold: text_metrics.vqa_accuracy([pred], [gold]),
}


@dataclass
class MetricReport:
    """Mergeable partial sums for every metric; finalize() derives the values.

    Real-valued partial sums are held as exact rationals (every float is a
    dyadic rational), so shard-then-merge finalizes bit-for-bit equal to a
    single pass regardless of shard boundaries.
    """

    config: tuple[str, ...] = DEFAULT_TEXT_METRICS
    iou_sum: Fraction = Fraction(0)
    iou_count: int = 0
    ap50_matched: int = 0
    ap50_pred_total: int = 0
    ap50_gold_total: int = 0
    f1_E: int = 0
    f1_A: int = 0
    f1_B: int = 0
    sample_count: int = 0
    text_partials: dict = field(default_factory=dict)

    def __post_init__(self):
        self.config = tuple(self.config)
        for name in self.config:
            if name not in _TEXT_FNS:
                raise ValueError(f"unknown text metric {name!r}")
            self.text_partials.setdefault(name, {"sum": Fraction(0), "count": 0})

    def add_masks(self, pred: GroundedPrediction, gold: GroundedPrediction) -> None:
        """Accumulate IoU, AP50 and grounding-F1 partials for one sample.

        Masks pair positionally; a slot present on only one side contributes
        an IoU of 0.0.
        """
        n = max(len(pred.masks), len(gold.masks))
        for i in range(n):
            if i < len(pred.masks) and i < len(gold.masks):
                self.iou_sum += Fraction(iou(pred.masks[i], gold.masks[i]))
            self.iou_count += 1
        self.ap50_matched += _greedy_match_count(
            list(pred.masks), list(gold.masks), 0.5
        )
        self.ap50_pred_total += len(pred.masks)
        self.ap50_gold_total += len(gold.masks)
        e, a, b = grounding_counts(pred, gold)
        self.f1_E += e
        self.f1_A += a
        self.f1_B += b

    def add_text(self, pred_text: str, gold_text: str) -> None:
        for name in self.config:
            partial = self.text_partials[name]
            partial["sum"] += Fraction(_TEXT_FNS[name](pred_text, gold_text))
            partial["count"] += 1

    def add_sample(
        self,
        pred: GroundedPrediction,
        gold: GroundedPrediction,
        pred_text: str,
        gold_text: str,
    ) -> None:
        self.add_masks(pred, gold)
        self.add_text(pred_text, gold_text)
        self.sample_count += 1

    def finalize(self) -> dict:
        """Flat record of finalized metric values plus the raw counts."""
        out = {}
        out["miou"] = float(self.iou_sum / self.iou_count) if self.iou_count else 0.0
        denom = max(self.ap50_pred_total, self.ap50_gold_total)
        out["ap50"] = self.ap50_matched / denom if denom else 1.0
        precision = self.f1_E / self.f1_A if self.f1_A else 0.0
        recall = self.f1_E / self.f1_B if self.f1_B else 0.0
        out["grounding_precision"] = precision
        out["grounding_recall"] = recall
        out["grounding_f1"] = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        for name in self.config:
            partial = self.text_partials[name]
            out[name] = (
                float(partial["sum"] / partial["count"]) if partial["count"] else 0.0
            )
        out["samples"] = self.sample_count
        out["iou_count"] = self.iou_count
        out["ap50_matched"] = self.ap50_matched
        out["ap50_pred_total"] = self.ap50_pred_total
        out["ap50_gold_total"] = self.ap50_gold_total
        out["f1_E"] = self.f1_E
        out["f1_A"] = self.f1_A
        out["f1_B"] = self.f1_B
        return out

    def to_json(self) -> str:
        return json.dumps(self.finalize())


def merge_reports(a: MetricReport, b: MetricReport) -> MetricReport:
    """Component-wise sums; both reports must share a metric configuration."""
    if a.config != b.config:
        raise ConfigMismatchError(f"{a.config} vs {b.config}")
    merged = MetricReport(config=a.config)
    merged.iou_sum = a.iou_sum + b.iou_sum
    merged.iou_count = a.iou_count + b.iou_count
    merged.ap50_matched = a.ap50_matched + b.ap50_matched
    merged.ap50_pred_total = a.ap50_pred_total + b.ap50_pred_total
    merged.ap50_gold_total = a.ap50_gold_total + b.ap50_gold_total
    merged.f1_E = a.f1_E + b.f1_E
    merged.f1_A = a.f1_A + b.f1_A
    merged.f1_B = a.f1_B + b.f1_B
    merged.sample_count = a.sample_count + b.sample_count
    for name in merged.config:
        merged.text_partials[name] = {
            "sum": a.text_partials[name]["sum"] + b.text_partials[name]["sum"],
            "count": a.text_partials[name]["count"] + b.text_partials[name]["count"],
        }
    return merged
