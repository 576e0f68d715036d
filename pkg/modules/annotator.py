#!/usr/bin/env python3
"""
Annotation module for the video pointing toolkit

Semi-automatic point annotation: sample candidate points inside a ground-truth
mask with probability proportional to their distance from the mask boundary,
segment each candidate with a segment-from-point oracle and keep the point
whose oracle mask agrees best (IoU) with the ground truth.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Protocol, Sequence, Tuple

import numpy as np

from core.errors import AnnotationError, InvalidInputError
from core.seeding import task_rng
from modules.masks import BinaryMask, MaskClip, PixelPoint, distance_to_boundary, iou

logger = logging.getLogger("annotator")

# ----------------------------------------------------------------------------
# Data classes
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PointAnnotation:
    """Point for one object at one frame; x, y are percent of width/height."""
    frame: int
    object: int
    x: float
    y: float
    video: str = ""

    def __post_init__(self):
        if not (0.0 <= self.x <= 100.0 and 0.0 <= self.y <= 100.0):
            raise InvalidInputError(f"percent coordinates out of range: ({self.x}, {self.y})")


class SegmentOracle(Protocol):
    def segment(self, frame: int, point: PixelPoint) -> BinaryMask:
        ...


@dataclass(frozen=True)
class CandidateSet:
    points: Tuple[PixelPoint, ...]
    weights: Tuple[float, ...]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class AnnotationFailure:
    frame: int
    object: int
    reason: str


@dataclass
class AnnotationBatch:
    """Annotations of one clip plus the (frame, object) tasks whose oracle failed."""
    annotations: List[PointAnnotation] = field(default_factory=list)
    failures: List[AnnotationFailure] = field(default_factory=list)

    def __iter__(self) -> Iterator[PointAnnotation]:
        return iter(self.annotations)

    def __len__(self) -> int:
        return len(self.annotations)


# ----------------------------------------------------------------------------
# Coordinate conventions
# ----------------------------------------------------------------------------

def pixel_to_percent(point: PixelPoint, width: int, height: int) -> Tuple[float, float]:
    # pixel centres
    return 100.0 * (point.x + 0.5) / width, 100.0 * (point.y + 0.5) / height


def percent_to_pixel(x: float, y: float, width: int, height: int) -> PixelPoint:
    col = min(max(int(math.floor(x / 100.0 * width)), 0), width - 1)
    row = min(max(int(math.floor(y / 100.0 * height)), 0), height - 1)
    return PixelPoint(col, row)


def to_annotation(point: PixelPoint, frame: int, obj: int, width: int, height: int,
                  video: str = "") -> PointAnnotation:
    x, y = pixel_to_percent(point, width, height)
    return PointAnnotation(frame=frame, object=obj, x=round(x, 2), y=round(y, 2), video=video)


# ----------------------------------------------------------------------------
# Candidate sampling and selection
# ----------------------------------------------------------------------------

def sampling_weights(m: BinaryMask) -> Tuple[np.ndarray, np.ndarray]:
    """(flat pixel indices in row-major order, their sampling weights)."""
    if m.is_empty:
        raise InvalidInputError("cannot sample candidates from an empty mask")
    flat_idx = np.flatnonzero(m.bits.ravel())
    weights = distance_to_boundary(m).values.ravel()[flat_idx]
    if not weights.any():
        # every pixel sits on the boundary (thin structure): uniform
        weights = np.ones_like(weights)
    return flat_idx, weights


def sample_candidates(m: BinaryMask, k: int, rng: np.random.Generator) -> CandidateSet:
    if k < 1:
        raise InvalidInputError(f"candidate count must be >= 1, got {k}")
    flat_idx, weights = sampling_weights(m)
    draws = rng.choice(flat_idx.size, size=k, replace=True, p=weights / weights.sum())
    points = tuple(PixelPoint(int(flat_idx[d] % m.width), int(flat_idx[d] // m.width)) for d in draws)
    return CandidateSet(points=points, weights=tuple(float(weights[d]) for d in draws))


def score_candidates(m_gt: BinaryMask, cands: CandidateSet, oracle: SegmentOracle, frame: int) -> List[float]:
    scores = []
    for p in cands.points:
        try:
            predicted = oracle.segment(frame, p)
        except Exception as e:
            raise AnnotationError(f"oracle failed at frame {frame}, point ({p.x}, {p.y}): {e}") from e
        scores.append(iou(predicted, m_gt))
    return scores


def select_point(m_gt: BinaryMask, cands: CandidateSet, oracle: SegmentOracle, frame: int) -> PixelPoint:
    """Candidate with the highest oracle IoU; ties go to the lowest index."""
    if len(cands) == 0:
        raise InvalidInputError("candidate set is empty")
    scores = score_candidates(m_gt, cands, oracle, frame)
    return cands.points[int(np.argmax(scores))]


# ----------------------------------------------------------------------------
# Clip annotation
# ----------------------------------------------------------------------------

def annotate_clip(gt: MaskClip, k: int, oracle: SegmentOracle, seed: int, video: str = "") -> AnnotationBatch:
    """One annotation per (frame, object) with a non-empty mask.

    Each task draws from its own generator keyed by (seed, frame, object), so the
    result is independent of processing order.
    """
    if k < 1:
        raise InvalidInputError(f"candidate count must be >= 1, got {k}")
    batch = AnnotationBatch()
    for frame in range(gt.frame_count):
        for obj in gt.object_ids:
            m = gt.mask(frame, obj)
            if m.is_empty:
                continue
            rng = task_rng(seed, frame, obj)
            cands = sample_candidates(m, k, rng)
            try:
                best = select_point(m, cands, oracle, frame)
            except AnnotationError as e:
                logger.warning("Аннотация пропущена: кадр %s, объект %s: %s", frame, obj, e)
                batch.failures.append(AnnotationFailure(frame, obj, str(e)))
                continue
            batch.annotations.append(to_annotation(best, frame, obj, gt.width, gt.height, video))
    logger.debug("annotate_clip %s: %d annotations, %d failures",
                 video or "<clip>", len(batch.annotations), len(batch.failures))
    return batch


def group_points(annotations: Sequence[PointAnnotation], width: int, height: int) -> dict:
    """{frame: [PixelPoint, ...]} in file order, for point_prf."""
    grouped: dict = {}
    for a in annotations:
        grouped.setdefault(a.frame, []).append(percent_to_pixel(a.x, a.y, width, height))
    return grouped
