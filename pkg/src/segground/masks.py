"""Binary masks, the run-length wire codec, geometry, and segmentation losses.

Rasters are row-major, height x width.  The run-length form starts with the
count of leading zeros (which may be 0) and alternates zero/one runs; it is
the unique minimal alternating encoding, so every run after the first must be
positive.  Wire records look like ``{"h": int, "w": int, "runs": [int, ...]}``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyMaskError,
    LengthMismatchError,
    MalformedRunsError,
)

BCE_EPS = 1e-7
DICE_SMOOTH = 1.0


class BinaryMask:
    """H x W boolean raster. Treated as immutable."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"mask must be 2D and non-degenerate, got shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def is_empty(self) -> bool:
        return not self.data.any()

    def complement(self) -> "BinaryMask":
        return BinaryMask(~self.data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(
            np.array_equal(self.data, other.data)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, {self.count()} set)"


class SoftMask:
    """H x W probability raster; every value in [0, 1]."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        arr = np.ascontiguousarray(probs, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"soft mask must be 2D and non-degenerate, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("soft mask probabilities must be finite")
        if (arr < 0).any() or (arr > 1).any():
            raise ValueError("soft mask probabilities must lie in [0, 1]")
        arr.setflags(write=False)
        self.probs = arr

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def __repr__(self) -> str:
        return f"SoftMask({self.height}x{self.width})"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in pixel coordinates, corners inclusive."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min < 0 or self.y_min < 0:
            raise ValueError("box coordinates must be non-negative")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("box corners must be ordered")


@dataclass(frozen=True)
class Point:
    """Single pixel in (x, y) = (column, row) coordinates."""

    x: int
    y: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError("point coordinates must be non-negative")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the text / per-pixel BCE / dice terms in the total loss."""

    lambda_text: float = 1.0
    lambda_bce: float = 2.0
    lambda_dice: float = 0.5

    def __post_init__(self):
        for name in ("lambda_text", "lambda_bce", "lambda_dice"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative")


def _require_same_dims(ha, wa, hb, wb) -> None:
    if (ha, wa) != (hb, wb):
        raise DimensionMismatchError(f"dimensions differ: {ha}x{wa} vs {hb}x{wb}")


def rle_encode(mask: BinaryMask) -> list[int]:
    """Row-major run lengths; first run counts leading zeros and may be 0."""
    flat = mask.data.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return runs


def rle_decode(runs: Sequence[int], height: int, width: int) -> BinaryMask:
    """Inverse of :func:`rle_encode`; validates the minimal alternating form."""
    runs = list(runs)
    for i, run in enumerate(runs):
        if not isinstance(run, (int, np.integer)) or run < 0:
            raise MalformedRunsError(f"run {i} is not a non-negative integer: {run!r}")
        if run == 0 and i > 0:
            raise MalformedRunsError(f"zero-length run at index {i}")
    total = sum(runs)
    if total != height * width:
        raise LengthMismatchError(
            f"runs sum to {total}, expected {height}x{width}={height * width}"
        )
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, runs)
    return BinaryMask(flat.reshape(height, width))


def mask_to_wire(mask: BinaryMask) -> dict:
    return {"h": mask.height, "w": mask.width, "runs": rle_encode(mask)}


def mask_from_wire(record: dict) -> BinaryMask:
    try:
        h, w, runs = record["h"], record["w"], record["runs"]
    except (KeyError, TypeError) as exc:
        raise MalformedRunsError(f"bad mask record: {record!r}") from exc
    return rle_decode(runs, h, w)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a & b| / |a | b|; defined as 1.0 when both masks are empty."""
    _require_same_dims(a.height, a.width, b.height, b.width)
    inter = int(np.count_nonzero(a.data & b.data))
    union = int(np.count_nonzero(a.data | b.data))
    if union == 0:
        return 1.0
    return inter / union


def dice_coeff(a: BinaryMask, b: BinaryMask) -> float:
    """2|a & b| / (|a| + |b|); defined as 1.0 when both masks are empty."""
    _require_same_dims(a.height, a.width, b.height, b.width)
    inter = int(np.count_nonzero(a.data & b.data))
    total = a.count() + b.count()
    if total == 0:
        return 1.0
    return 2 * inter / total


def bce_loss(pred: SoftMask, target: BinaryMask, eps: float = BCE_EPS) -> float:
    """Mean per-pixel binary cross-entropy; probabilities clamped to [eps, 1-eps]."""
    _require_same_dims(pred.height, pred.width, target.height, target.width)
    p = np.clip(pred.probs, eps, 1.0 - eps)
    t = target.data.astype(np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def dice_loss(pred: SoftMask, target: BinaryMask, smooth: float = DICE_SMOOTH) -> float:
    """Soft dice loss 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)."""
    _require_same_dims(pred.height, pred.width, target.height, target.width)
    p = pred.probs
    t = target.data.astype(np.float64)
    num = 2.0 * float(np.sum(p * t)) + smooth
    den = float(np.sum(p)) + float(np.sum(t)) + smooth
    return 1.0 - num / den


def total_loss(
    text_loss: float, bce: float, dice: float, w: LossWeights = LossWeights()
) -> float:
    """Weighted linear combination of the three loss components."""
    for name, value in (("text_loss", text_loss), ("bce", bce), ("dice", dice)):
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")
    return w.lambda_text * text_loss + w.lambda_bce * bce + w.lambda_dice * dice


def bbox_of(mask: BinaryMask) -> Box:
    """Tightest axis-aligned box containing all true pixels."""
    rows = np.flatnonzero(mask.data.any(axis=1))
    cols = np.flatnonzero(mask.data.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    return Box(
        x_min=int(cols[0]), y_min=int(rows[0]), x_max=int(cols[-1]), y_max=int(rows[-1])
    )


def sample_point(mask: BinaryMask, rng_seed: int) -> Point:
    """Uniformly random true pixel; deterministic for a given seed."""
    idx = np.flatnonzero(mask.data.ravel())
    if idx.size == 0:
        raise EmptyMaskError("cannot sample a point from an empty mask")
    pick = random.Random(rng_seed).randrange(idx.size)
    row, col = divmod(int(idx[pick]), mask.width)
    return Point(x=col, y=row)


def mask_union(masks: Iterable[BinaryMask]) -> BinaryMask:
    """Pixelwise union; all masks must share dimensions."""
    masks = list(masks)
    if not masks:
        raise EmptyMaskError("union of zero masks is undefined")
    acc = masks[0].data.copy()
    for m in masks[1:]:
        _require_same_dims(masks[0].height, masks[0].width, m.height, m.width)
        acc |= m.data
    return BinaryMask(acc)
