#!/usr/bin/env python3
"""
Metrics module for the video pointing toolkit

Region Jaccard (J), boundary F-measure (F), J&F, point precision/recall/F1
and counting MAE/EMA, plus the report record every command emits.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import InvalidInputError
from modules.masks import (
    BinaryMask, MaskClip, PixelPoint,
    boundary_map, distance_to_nearest, iou, require_same_layout,
)

logger = logging.getLogger("metrics")

BOUNDARY_TOLERANCE_FRACTION = 0.008

# ----------------------------------------------------------------------------
# Score records
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SegScore:
    j: float
    f: float
    jf: float

    @classmethod
    def of(cls, j: float, f: float) -> "SegScore":
        return cls(j=j, f=f, jf=(j + f) / 2)


@dataclass(frozen=True)
class PointScore:
    precision: float
    recall: float
    f1: float
    matched: int
    predicted: int
    actual: int

    @classmethod
    def from_counts(cls, matched: int, predicted: int, actual: int) -> "PointScore":
        precision = matched / predicted if predicted else 0.0
        recall = matched / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1, matched, predicted, actual)


@dataclass(frozen=True)
class CountScore:
    mae: float
    ema: float


@dataclass(frozen=True)
class ObjectScore:
    clip: str
    object: int
    j: float
    f: float


@dataclass
class EvalReport:
    """Machine-readable evaluation record; carries the full configuration echo."""
    dataset: str
    strategy: Optional[str] = None
    tau: Optional[float] = None
    k: Optional[int] = None
    l: Optional[int] = None
    j: Optional[float] = None
    f: Optional[float] = None
    jf: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    mae: Optional[float] = None
    ema: Optional[float] = None
    temporal: Optional[Dict[str, object]] = None
    config: Dict[str, object] = field(default_factory=dict)
    objects: List[ObjectScore] = field(default_factory=list)

    def with_segmentation(self, score: SegScore) -> "EvalReport":
        self.j, self.f, self.jf = score.j, score.f, score.jf
        return self

    def with_points(self, score: PointScore) -> "EvalReport":
        self.precision, self.recall, self.f1 = score.precision, score.recall, score.f1
        return self

    def with_counts(self, score: CountScore) -> "EvalReport":
        self.mae, self.ema = score.mae, score.ema
        return self

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


# ----------------------------------------------------------------------------
# Segmentation metrics
# ----------------------------------------------------------------------------

def boundary_tolerance(height: int, width: int) -> int:
    """max(1, round(0.008 · diagonal)) pixels, rounding halves up."""
    diagonal = math.sqrt(height * height + width * width)
    return max(1, int(math.floor(BOUNDARY_TOLERANCE_FRACTION * diagonal + 0.5)))


def boundary_f(pred: BinaryMask, gt: BinaryMask, tol: float) -> float:
    if pred.shape != gt.shape:
        raise InvalidInputError(f"mask dimensions differ: {pred.shape} vs {gt.shape}")
    if tol < 0:
        raise InvalidInputError(f"boundary tolerance must be >= 0, got {tol}")
    pred_b = boundary_map(pred)
    gt_b = boundary_map(gt)
    n_pred = int(np.count_nonzero(pred_b))
    n_gt = int(np.count_nonzero(gt_b))
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    precision = np.count_nonzero(distance_to_nearest(gt_b)[pred_b] <= tol) / n_pred
    recall = np.count_nonzero(distance_to_nearest(pred_b)[gt_b] <= tol) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def frame_scores(pred: MaskClip, gt: MaskClip, tol: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per (frame, object) IoU and boundary F, each shaped (frames, objects)."""
    require_same_layout(pred, gt)
    if not gt.object_ids:
        raise InvalidInputError("clip has no objects to score")
    if tol is None:
        tol = boundary_tolerance(gt.height, gt.width)
    shape = (gt.frame_count, len(gt.object_ids))
    js = np.empty(shape, dtype=np.float64)
    fs = np.empty(shape, dtype=np.float64)
    for t in range(gt.frame_count):
        for o, obj in enumerate(gt.object_ids):
            p, g = pred.mask(t, obj), gt.mask(t, obj)
            js[t, o] = iou(p, g)
            fs[t, o] = boundary_f(p, g, tol)
    return js, fs


def region_jaccard(pred: MaskClip, gt: MaskClip) -> float:
    """Per (object, frame) IoU averaged over frames, then over objects."""
    require_same_layout(pred, gt)
    if not gt.object_ids:
        raise InvalidInputError("clip has no objects to score")
    per_object = []
    for obj in gt.object_ids:
        ious = [iou(pred.mask(t, obj), gt.mask(t, obj)) for t in range(gt.frame_count)]
        per_object.append(sum(ious) / len(ious))
    return sum(per_object) / len(per_object)


def object_scores(pred: MaskClip, gt: MaskClip, clip_name: str = "",
                  tol: Optional[float] = None) -> List[ObjectScore]:
    js, fs = frame_scores(pred, gt, tol)
    n = gt.frame_count
    # left-to-right sums, same order as region_jaccard
    return [
        ObjectScore(clip=clip_name, object=obj, j=sum(js[:, o].tolist()) / n, f=sum(fs[:, o].tolist()) / n)
        for o, obj in enumerate(gt.object_ids)
    ]


def aggregate(objects: Sequence[ObjectScore]) -> SegScore:
    """Object-level mean over every scored object (across clips when several are given)."""
    if not objects:
        raise InvalidInputError("nothing to aggregate")
    j = sum(o.j for o in objects) / len(objects)
    f = sum(o.f for o in objects) / len(objects)
    return SegScore.of(j, f)


def jf(pred: MaskClip, gt: MaskClip, tol: Optional[float] = None) -> SegScore:
    return aggregate(object_scores(pred, gt, tol=tol))


# ----------------------------------------------------------------------------
# Pointing metrics
# ----------------------------------------------------------------------------

def match_frame_points(points: Sequence[PixelPoint], gt: MaskClip, frame: int) -> Tuple[int, int, int]:
    """Greedy one-to-one matching in prediction order: returns (matched, predicted, actual)."""
    present = [obj for obj in gt.object_ids if not gt.mask(frame, obj).is_empty]
    unmatched = list(present)
    matched = 0
    for p in points:
        for obj in unmatched:
            if gt.mask(frame, obj).contains(p):
                unmatched.remove(obj)
                matched += 1
                break
    return matched, len(points), len(present)


def point_counts(pred_points: Mapping[int, Sequence[PixelPoint]], gt: MaskClip) -> Tuple[int, int, int]:
    for frame in pred_points:
        if not 0 <= frame < gt.frame_count:
            raise InvalidInputError(f"prediction frame {frame} outside clip of {gt.frame_count} frames")
    totals = [0, 0, 0]
    for frame in range(gt.frame_count):
        counts = match_frame_points(pred_points.get(frame, ()), gt, frame)
        totals = [a + b for a, b in zip(totals, counts)]
    return totals[0], totals[1], totals[2]


def point_prf(pred_points: Mapping[int, Sequence[PixelPoint]], gt: MaskClip) -> PointScore:
    return PointScore.from_counts(*point_counts(pred_points, gt))


# ----------------------------------------------------------------------------
# Counting metrics
# ----------------------------------------------------------------------------

def counting(preds: Sequence[int], gts: Sequence[int]) -> CountScore:
    if len(preds) != len(gts):
        raise InvalidInputError(f"{len(preds)} predicted counts for {len(gts)} ground-truth counts")
    if not gts:
        raise InvalidInputError("counting needs at least one clip")
    errors = [abs(int(p) - int(g)) for p, g in zip(preds, gts)]
    exact = sum(1 for e in errors if e == 0)
    return CountScore(mae=sum(errors) / len(errors), ema=100.0 * exact / len(errors))
