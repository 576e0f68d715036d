#!/usr/bin/env python3
"""
Temporal mask fusion module for the video pointing toolkit

Masks known at sparse keyframes are propagated forward (from the left
keyframe) and backward (from the right keyframe) into every intermediate
frame and reconciled there. The bidirectional rule keeps the intersection when
the two propagations agree (IoU >= tau), their union otherwise, and falls back
to whichever side is non-empty when one propagation failed. Five naive
reconciliation strategies are kept as baselines.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Protocol, Sequence, Tuple

from core.config import DEFAULT_K, DEFAULT_STRATEGY, DEFAULT_TAU
from core.errors import InvalidInputError
from modules.annotator import PointAnnotation, SegmentOracle, percent_to_pixel
from modules.masks import BinaryMask, MaskClip, intersect, iou, union

logger = logging.getLogger("fusion")

# ----------------------------------------------------------------------------
# Strategy names and configuration
# ----------------------------------------------------------------------------

class Strategy(str, Enum):
    BIDIRECTIONAL = "bidirectional"
    PREFER_LEFT = "prefer-left"
    PREFER_RIGHT = "prefer-right"
    INTERSECTION = "intersection"
    LARGER = "larger"
    SMALLER = "smaller"


class Propagator(Protocol):
    def propagate(self, source_frame: int, source_mask: BinaryMask, target_frame: int) -> BinaryMask:
        """Estimated mask at ``target_frame``; direction follows the sign of target - source."""
        ...


@dataclass(frozen=True)
class FusionConfig:
    k: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    strategy: Strategy = Strategy(DEFAULT_STRATEGY)

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError(f"sampling rate k must be >= 1, got {self.k}")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidInputError(f"tau must lie in [0, 1], got {self.tau}")
        try:
            object.__setattr__(self, "strategy", Strategy(self.strategy))
        except ValueError:
            raise InvalidInputError(f"unknown strategy {self.strategy!r}") from None


@dataclass(frozen=True)
class KeyframeSet:
    """Per-object masks at strictly increasing keyframe indices starting at 0."""
    frame_count: int
    indices: Tuple[int, ...]
    masks: Mapping[int, Tuple[BinaryMask, ...]]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx or idx[0] != 0:
            raise InvalidInputError(f"keyframes must start at frame 0, got {list(idx)}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidInputError(f"keyframe indices must be strictly increasing, got {list(idx)}")
        if idx[-1] >= self.frame_count:
            raise InvalidInputError(f"keyframe {idx[-1]} outside clip of {self.frame_count} frames")
        if not self.masks:
            raise InvalidInputError("keyframe set has no objects")
        shapes = set()
        for obj, ms in self.masks.items():
            if len(ms) != len(idx):
                raise InvalidInputError(f"object {obj} has {len(ms)} keyframe masks for {len(idx)} keyframes")
            shapes.update(m.shape for m in ms)
        if len(shapes) != 1:
            raise InvalidInputError(f"keyframe masks have different dimensions {sorted(shapes)}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "masks", {int(o): tuple(ms) for o, ms in sorted(self.masks.items())})

    @property
    def shape(self) -> Tuple[int, int]:
        first = next(iter(self.masks.values()))
        return first[0].shape

    @property
    def object_ids(self) -> Tuple[int, ...]:
        return tuple(self.masks)

    def max_gap(self) -> int:
        ends = list(self.indices) + [self.frame_count - 1]
        return max(b - a for a, b in zip(ends, ends[1:])) if len(ends) > 1 else 0

    @classmethod
    def from_clip(cls, clip: MaskClip, k: int) -> "KeyframeSet":
        """Keyframe masks taken from a (ground-truth) clip at the sampling rate k."""
        idx = keyframes(clip.frame_count, k)
        masks = {obj: tuple(clip.mask(t, obj) for t in idx) for obj in clip.object_ids}
        return cls(frame_count=clip.frame_count, indices=tuple(idx), masks=masks)


# ----------------------------------------------------------------------------
# Keyframes
# ----------------------------------------------------------------------------

def keyframes(frame_count: int, k: int) -> List[int]:
    """{0, k, 2k, ...} below frame_count; frames after the last keyframe form the tail."""
    if frame_count < 1:
        raise InvalidInputError(f"frame_count must be >= 1, got {frame_count}")
    if k < 1:
        raise InvalidInputError(f"sampling rate k must be >= 1, got {k}")
    return list(range(0, frame_count, k))


def tail_frames(frame_count: int, k: int) -> List[int]:
    last = keyframes(frame_count, k)[-1]
    return list(range(last + 1, frame_count))


def points_to_keyframes(points: Sequence[PointAnnotation], oracle: SegmentOracle, frame_count: int,
                        k: int, width: int, height: int,
                        object_ids: Optional[Sequence[int]] = None) -> KeyframeSet:
    """Keyframe masks from predicted keyframe points via the segment-from-point oracle.

    Points on non-keyframes are ignored; a keyframe without a point for an
    object gets an empty mask, which the fusion fallback then absorbs.
    """
    idx = keyframes(frame_count, k)
    wanted = set(idx)
    by_key: Dict[Tuple[int, int], PointAnnotation] = {}
    for p in points:
        if p.frame in wanted:
            by_key.setdefault((p.frame, p.object), p)
    ids = sorted(set(object_ids) if object_ids is not None else {o for _, o in by_key})
    if not ids:
        raise InvalidInputError("no keyframe points to build masks from")
    masks: Dict[int, Tuple[BinaryMask, ...]] = {}
    for obj in ids:
        per_frame = []
        for t in idx:
            p = by_key.get((t, obj))
            if p is None:
                per_frame.append(BinaryMask.empty(width, height))
                continue
            per_frame.append(oracle.segment(t, percent_to_pixel(p.x, p.y, width, height)))
        masks[obj] = tuple(per_frame)
    return KeyframeSet(frame_count=frame_count, indices=tuple(idx), masks=masks)


# ----------------------------------------------------------------------------
# Reconciliation of two propagated masks
# ----------------------------------------------------------------------------

def fuse_pair(left: BinaryMask, right: BinaryMask, tau: float) -> BinaryMask:
    """Bidirectional rule with the empty-mask fallback."""
    if left.shape != right.shape:
        raise InvalidInputError(f"mask dimensions differ: {left.shape} vs {right.shape}")
    if left.is_empty:
        return right
    if right.is_empty:
        return left
    if iou(left, right) >= tau:
        return intersect(left, right)
    return union(left, right)


def prefer_left(left: BinaryMask, right: BinaryMask) -> BinaryMask:
    _same(left, right)
    return left


def prefer_right(left: BinaryMask, right: BinaryMask) -> BinaryMask:
    _same(left, right)
    return right


def larger(left: BinaryMask, right: BinaryMask) -> BinaryMask:
    _same(left, right)
    return right if right.area > left.area else left


def smaller(left: BinaryMask, right: BinaryMask) -> BinaryMask:
    _same(left, right)
    return right if right.area < left.area else left


def _same(left: BinaryMask, right: BinaryMask) -> None:
    if left.shape != right.shape:
        raise InvalidInputError(f"mask dimensions differ: {left.shape} vs {right.shape}")


NAIVE_STRATEGIES: Dict[Strategy, Callable[[BinaryMask, BinaryMask], BinaryMask]] = {
    Strategy.PREFER_LEFT: prefer_left,
    Strategy.PREFER_RIGHT: prefer_right,
    Strategy.INTERSECTION: intersect,
    Strategy.LARGER: larger,
    Strategy.SMALLER: smaller,
}


def combine(left: BinaryMask, right: BinaryMask, cfg: FusionConfig) -> BinaryMask:
    if cfg.strategy is Strategy.BIDIRECTIONAL:
        return fuse_pair(left, right, cfg.tau)
    return NAIVE_STRATEGIES[cfg.strategy](left, right)


# ----------------------------------------------------------------------------
# Clip fusion
# ----------------------------------------------------------------------------

def _safe_propagate(prop: Propagator, source: int, mask: BinaryMask, target: int, obj: int) -> BinaryMask:
    """Propagator failures become empty masks (the fallback input)."""
    try:
        out = prop.propagate(source, mask, target)
    except Exception as e:
        logger.warning("Сбой propagate %s→%s (объект %s): %s", source, target, obj, e)
        return BinaryMask.empty(mask.width, mask.height)
    if out.shape != mask.shape:
        logger.warning("propagate %s→%s (объект %s) вернул маску %s вместо %s",
                       source, target, obj, out.shape, mask.shape)
        return BinaryMask.empty(mask.width, mask.height)
    return out


def fuse_object(kf: KeyframeSet, obj: int, prop: Propagator, cfg: FusionConfig) -> List[BinaryMask]:
    kmasks = kf.masks[obj]
    out: List[Optional[BinaryMask]] = [None] * kf.frame_count
    for i, t in enumerate(kf.indices):
        out[t] = kmasks[i]
    for (a, ma), (b, mb) in zip(zip(kf.indices, kmasks), zip(kf.indices[1:], kmasks[1:])):
        for n in range(a + 1, b):
            left = _safe_propagate(prop, a, ma, n, obj)
            right = _safe_propagate(prop, b, mb, n, obj)
            out[n] = combine(left, right, cfg)
    last, mlast = kf.indices[-1], kmasks[-1]
    for n in range(last + 1, kf.frame_count):
        out[n] = _safe_propagate(prop, last, mlast, n, obj)
    return out  # type: ignore[return-value]


def fuse_clip(kf: KeyframeSet, prop: Propagator, cfg: FusionConfig) -> MaskClip:
    """Dense per-frame masks; keyframe masks are copied through unchanged."""
    gaps = [b - a for a, b in zip(kf.indices, kf.indices[1:])]
    if gaps and max(gaps) > cfg.k:
        raise InvalidInputError(f"keyframe gap {max(gaps)} exceeds sampling rate k={cfg.k}")
    fused = {obj: fuse_object(kf, obj, prop, cfg) for obj in kf.object_ids}
    logger.debug("fuse_clip: %d frames, %d objects, strategy=%s, tau=%.2f, k=%d",
                 kf.frame_count, len(fused), cfg.strategy.value, cfg.tau, cfg.k)
    return MaskClip.from_masks(fused)
