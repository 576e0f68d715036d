#!/usr/bin/env python3
"""
Synthetic video module for the video pointing toolkit

Deterministic moving-shape clips with exact per-frame masks, points and
counts, plus the reference propagators and the segment-from-point oracle
that stand in for a real video segmentation model.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.errors import InvalidInputError
from core.seeding import task_rng
from modules.annotator import PointAnnotation, to_annotation
from modules.masks import BinaryMask, MaskClip, PixelPoint, dilate, distance_to_boundary, flood_fill, iou

logger = logging.getLogger("synth")

MAX_OBJECTS = 255
COUNTING_COUNTS = (2, 3, 4, 6, 7, 8, 9, 11, 12, 13)

# ----------------------------------------------------------------------------
# Configuration models
# ----------------------------------------------------------------------------

class ObjectSpec(BaseModel):
    """One moving shape; start/velocity left out are drawn from the scene seed."""
    model_config = ConfigDict(extra="forbid")

    shape: Literal["ellipse", "rectangle"] = "ellipse"
    size: Union[float, Tuple[float, float]] = 8.0
    start: Optional[Tuple[float, float]] = None
    velocity: Optional[Tuple[float, float]] = None

    @field_validator("size")
    @classmethod
    def _positive_size(cls, v):
        extent = (v, v) if isinstance(v, (int, float)) else v
        if min(extent) <= 0:
            raise ValueError(f"object size must be positive, got {v}")
        return v

    @property
    def extent(self) -> Tuple[float, float]:
        """(width, height) in pixels."""
        if isinstance(self.size, (int, float)):
            return float(self.size), float(self.size)
        return float(self.size[0]), float(self.size[1])


class NoiseSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    jitter: float = Field(0.0, ge=0.0)
    dropout: float = Field(0.0, ge=0.0, le=1.0)
    spill: float = Field(0.0, ge=0.0)


class SceneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["scene"] = "scene"
    name: str = "scene"
    width: int = Field(64, ge=1)
    height: int = Field(64, ge=1)
    frames: int = Field(16, ge=1)
    objects: List[ObjectSpec] = Field(min_length=1, max_length=MAX_OBJECTS)


class SuiteConfig(BaseModel):
    """Generated suites: random fusion benchmarks or the counting fixture."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["benchmark", "counting"]
    clips: int = Field(10, ge=1)
    width: int = Field(64, ge=8)
    height: int = Field(64, ge=8)
    frames: Tuple[int, int] = (16, 24)
    objects: Tuple[int, int] = (1, 3)
    counts: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check_ranges(self):
        if not 1 <= self.frames[0] <= self.frames[1]:
            raise ValueError(f"frames range {self.frames} is not increasing")
        if not 1 <= self.objects[0] <= self.objects[1]:
            raise ValueError(f"objects range {self.objects} is not increasing")
        if self.counts is not None and any(not 1 <= c <= 16 for c in self.counts):
            raise ValueError("counting suite counts must lie in [1, 16]")
        return self


def parse_synth_config(data: dict) -> Union[SceneConfig, SuiteConfig]:
    """Dispatch on ``kind``: scene (default), benchmark or counting."""
    if not isinstance(data, dict):
        raise InvalidInputError("synth config must be a mapping")
    if data.get("kind", "scene") == "scene":
        return SceneConfig.model_validate(data)
    return SuiteConfig.model_validate(data)


# ----------------------------------------------------------------------------
# Generated clips
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SynthClip:
    name: str
    labels: np.ndarray
    gt: MaskClip
    points: Tuple[PointAnnotation, ...]
    count: int
    seed: int

    @property
    def width(self) -> int:
        return self.gt.width

    @property
    def height(self) -> int:
        return self.gt.height

    @property
    def frame_count(self) -> int:
        return self.gt.frame_count


def _resolve_motion(obj: ObjectSpec, index: int, cfg: SceneConfig, seed: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    rng = task_rng(seed, "object", index)
    w, h = obj.extent
    draws = rng.uniform(0.0, 1.0, size=4)
    if obj.start is not None:
        start = (float(obj.start[0]), float(obj.start[1]))
    else:
        # keep the whole shape inside the frame when it fits
        lo_x = min(w / 2, cfg.width - 1)
        hi_x = max(cfg.width - 1 - w / 2, lo_x)
        lo_y = min(h / 2, cfg.height - 1)
        hi_y = max(cfg.height - 1 - h / 2, lo_y)
        start = (lo_x + draws[0] * (hi_x - lo_x), lo_y + draws[1] * (hi_y - lo_y))
    if obj.velocity is not None:
        velocity = (float(obj.velocity[0]), float(obj.velocity[1]))
    else:
        velocity = (3.0 * draws[2] - 1.5, 3.0 * draws[3] - 1.5)
    return start, velocity


def _rasterize(shape: str, cx: float, cy: float, w: float, h: float, width: int, height: int) -> np.ndarray:
    ys, xs = np.mgrid[0:height, 0:width]
    dx = (xs - cx) / (w / 2)
    dy = (ys - cy) / (h / 2)
    if shape == "ellipse":
        return dx * dx + dy * dy <= 1.0
    return (np.abs(dx) <= 1.0) & (np.abs(dy) <= 1.0)


def _representative_point(m: BinaryMask) -> PixelPoint:
    """Deepest interior pixel, first in row-major order among ties."""
    values = distance_to_boundary(m).values
    flat = int(np.argmax(np.where(m.bits, values, -1.0)))
    return PixelPoint(flat % m.width, flat // m.width)


def gen_scene(cfg: SceneConfig, seed: int, name: Optional[str] = None) -> SynthClip:
    """Rasterise every object per frame; later objects never cover earlier ones."""
    n = len(cfg.objects)
    labels = np.zeros((cfg.frames, cfg.height, cfg.width), dtype=np.uint8)
    for index, obj in enumerate(cfg.objects):
        object_id = index + 1
        (sx, sy), (vx, vy) = _resolve_motion(obj, index, cfg, seed)
        w, h = obj.extent
        for t in range(cfg.frames):
            cx = min(max(sx + t * vx, 0.0), cfg.width - 1.0)
            cy = min(max(sy + t * vy, 0.0), cfg.height - 1.0)
            region = _rasterize(obj.shape, cx, cy, w, h, cfg.width, cfg.height)
            frame = labels[t]
            frame[region & (frame == 0)] = object_id
        if not (labels == object_id).any():
            raise InvalidInputError(f"object {object_id} ({obj.shape}, size {obj.size}) is never visible")
    gt = MaskClip.from_label_frames(labels, object_ids=range(1, n + 1))
    points = []
    for t in range(cfg.frames):
        for object_id in gt.object_ids:
            m = gt.mask(t, object_id)
            if not m.is_empty:
                points.append(to_annotation(_representative_point(m), t, object_id,
                                            cfg.width, cfg.height, video=name or cfg.name))
    labels.setflags(write=False)
    clip = SynthClip(name=name or cfg.name, labels=labels, gt=gt, points=tuple(points),
                     count=len(gt.object_ids), seed=seed)
    logger.debug("gen_scene %s: %d frames, %d objects, seed %d", clip.name, cfg.frames, n, seed)
    return clip


# ----------------------------------------------------------------------------
# Reference propagators and oracle
# ----------------------------------------------------------------------------

def _gt_of(clip: Union[SynthClip, MaskClip]) -> MaskClip:
    return clip.gt if isinstance(clip, SynthClip) else clip


class ExactPropagator:
    """Returns the ground truth of whichever object best matches the source mask."""

    def __init__(self, gt: MaskClip):
        self.gt = gt

    def identify(self, source_frame: int, source_mask: BinaryMask) -> Optional[int]:
        if source_mask.is_empty:
            return None
        best, best_iou = None, 0.0
        for obj in self.gt.object_ids:
            score = iou(source_mask, self.gt.mask(source_frame, obj))
            if score > best_iou:
                best, best_iou = obj, score
        return best

    def propagate(self, source_frame: int, source_mask: BinaryMask, target_frame: int) -> BinaryMask:
        if source_mask.shape != (self.gt.height, self.gt.width):
            raise InvalidInputError(f"source mask {source_mask.shape} does not match the clip")
        obj = self.identify(source_frame, source_mask)
        if obj is None:
            return BinaryMask.empty(self.gt.width, self.gt.height)
        return self.gt.mask(target_frame, obj)


class NoisyPropagator(ExactPropagator):
    """Exact result shifted by Gaussian integer jitter (std-dev jitter·|target − source|)
    and dropped to an empty mask with probability ``dropout``.

    ``spill`` adds leakage: the shifted mask grows by a Poisson number of pixels
    with mean spill·|target − source| (0 disables it). ``direction`` limits
    dropout to forward (target > source) or backward propagation. Every
    (stream, source, target, object) draws from its own generator, so results
    are reproducible regardless of call order.
    """

    def __init__(self, gt: MaskClip, jitter: float, dropout: float, seed: int,
                 direction: Optional[str] = None, stream: str = "", spill: float = 0.0):
        super().__init__(gt)
        if jitter < 0:
            raise InvalidInputError(f"jitter must be >= 0, got {jitter}")
        if spill < 0:
            raise InvalidInputError(f"spill must be >= 0, got {spill}")
        if not 0.0 <= dropout <= 1.0:
            raise InvalidInputError(f"dropout must lie in [0, 1], got {dropout}")
        if direction not in (None, "forward", "backward"):
            raise InvalidInputError(f"direction must be forward or backward, got {direction!r}")
        self.jitter = jitter
        self.dropout = dropout
        self.spill = spill
        self.seed = seed
        self.direction = direction
        self.stream = stream

    def _drops(self, source_frame: int, target_frame: int) -> bool:
        if self.direction == "forward":
            return target_frame > source_frame
        if self.direction == "backward":
            return target_frame < source_frame
        return True

    def propagate(self, source_frame: int, source_mask: BinaryMask, target_frame: int) -> BinaryMask:
        if source_mask.shape != (self.gt.height, self.gt.width):
            raise InvalidInputError(f"source mask {source_mask.shape} does not match the clip")
        obj = self.identify(source_frame, source_mask)
        if obj is None:
            return BinaryMask.empty(self.gt.width, self.gt.height)
        exact = self.gt.mask(target_frame, obj)
        distance = abs(target_frame - source_frame)
        rng = task_rng(self.seed, self.stream, source_frame, target_frame, obj)
        # fixed draw order: dropout roll, shift, leakage
        roll = rng.random()
        dx, dy = (int(v) for v in np.rint(rng.normal(0.0, self.jitter * distance, size=2)))
        grow = int(rng.poisson(self.spill * distance))
        if roll < self.dropout and self._drops(source_frame, target_frame):
            return BinaryMask.empty(exact.width, exact.height)
        dx = min(max(dx, -(exact.width - 1)), exact.width - 1)
        dy = min(max(dy, -(exact.height - 1)), exact.height - 1)
        return dilate(exact.translate(dx, dy), grow)


class FloodFillOracle:
    """Segment-from-point oracle: the 4-connected label region under the point."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim != 3:
            raise InvalidInputError(f"label frames must be 3-D (T, H, W), got {labels.ndim}-D")
        self.labels = labels

    def segment(self, frame: int, point: PixelPoint) -> BinaryMask:
        if not 0 <= frame < self.labels.shape[0]:
            raise InvalidInputError(f"frame {frame} outside clip of {self.labels.shape[0]} frames")
        return flood_fill(self.labels[frame], point)


def exact_propagator(clip: Union[SynthClip, MaskClip]) -> ExactPropagator:
    return ExactPropagator(_gt_of(clip))


def noisy_propagator(clip: Union[SynthClip, MaskClip], jitter: float, dropout: float, seed: int,
                     direction: Optional[str] = None, stream: str = "", spill: float = 0.0) -> NoisyPropagator:
    return NoisyPropagator(_gt_of(clip), jitter, dropout, seed, direction=direction, stream=stream, spill=spill)


def segment_oracle(clip: Union[SynthClip, np.ndarray]) -> FloodFillOracle:
    return FloodFillOracle(clip.labels if isinstance(clip, SynthClip) else clip)


# ----------------------------------------------------------------------------
# Generated suites
# ----------------------------------------------------------------------------

MAX_ATTEMPTS = 50


def _fully_visible(clip: SynthClip) -> bool:
    return bool(clip.gt.data.any(axis=(2, 3)).all())


def _attempt_seed(seed: int, *keys) -> int:
    return int(task_rng(seed, *keys).integers(0, 2 ** 31 - 1))


def benchmark_suite(cfg: SuiteConfig, seed: int) -> List[SynthClip]:
    """Random fusion clips in which every object stays visible on every frame."""
    clips = []
    for i in range(cfg.clips):
        name = f"clip_{i:03d}"
        for attempt in range(MAX_ATTEMPTS):
            rng = task_rng(seed, "benchmark", i, attempt)
            n_objects = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
            frames = int(rng.integers(cfg.frames[0], cfg.frames[1] + 1))
            small = max(4.0, min(cfg.width, cfg.height) / 8)
            objects = [
                ObjectSpec(
                    shape=("ellipse", "rectangle")[int(rng.integers(2))],
                    size=(float(rng.uniform(small, 2.5 * small)), float(rng.uniform(small, 2.5 * small))),
                )
                for _ in range(n_objects)
            ]
            scene = SceneConfig(name=name, width=cfg.width, height=cfg.height, frames=frames, objects=objects)
            try:
                clip = gen_scene(scene, _attempt_seed(seed, name, attempt), name=name)
            except InvalidInputError:
                continue
            if _fully_visible(clip):
                clips.append(clip)
                break
        else:
            raise InvalidInputError(f"could not generate {name} with every object visible")
    logger.info("Сгенерирован набор: %d клипов", len(clips))
    return clips


def counting_suite(cfg: SuiteConfig, seed: int) -> List[SynthClip]:
    """Clips whose objects sit in distinct cells of a 4×4 grid and never meet."""
    counts = list(cfg.counts) if cfg.counts is not None else list(COUNTING_COUNTS[:cfg.clips])
    if len(counts) < cfg.clips:
        raise InvalidInputError(f"{cfg.clips} counting clips requested but only {len(counts)} counts given")
    cell_w, cell_h = cfg.width / 4, cfg.height / 4
    frames = cfg.frames[0]
    clips = []
    for i, count in enumerate(counts[:cfg.clips]):
        name = f"count_{i:03d}"
        rng = task_rng(seed, "counting", i)
        cells = rng.permutation(16)[:count]
        reach = min(cell_w, cell_h)
        objects = []
        for cell in cells:
            size = float(rng.uniform(reach / 3, reach * 5 / 12))
            speed = 0.75 if frames < 2 else min(0.75, (reach / 2 - size / 2 - 1) / (frames - 1))
            objects.append(ObjectSpec(
                shape=("ellipse", "rectangle")[int(rng.integers(2))],
                size=size,
                start=((cell % 4 + 0.5) * cell_w, (cell // 4 + 0.5) * cell_h),
                velocity=tuple(float(v) for v in rng.uniform(-speed, speed, size=2)),
            ))
        scene = SceneConfig(name=name, width=cfg.width, height=cfg.height, frames=frames, objects=objects)
        clip = gen_scene(scene, _attempt_seed(seed, name), name=name)
        if clip.count != count:
            raise InvalidInputError(f"{name}: generated {clip.count} objects, expected {count}")
        clips.append(clip)
    return clips


def generate(cfg: Union[SceneConfig, SuiteConfig], seed: int) -> List[SynthClip]:
    if isinstance(cfg, SceneConfig):
        return [gen_scene(cfg, seed)]
    if cfg.kind == "counting":
        return counting_suite(cfg, seed)
    return benchmark_suite(cfg, seed)


def suite_counts(clips: Sequence[SynthClip]) -> List[int]:
    return [c.count for c in clips]
