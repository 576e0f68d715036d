#!/usr/bin/env python3
"""
Binary mask module for the video pointing toolkit

Exact mask algebra (IoU, intersection, union), boundary extraction, the
Euclidean distance to the boundary, flood fill on label images, the MSEQ
run-length container and the MaskClip sequence type.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.errors import InvalidInputError, MalformedDataError

logger = logging.getLogger("masks")

RLE_MAGIC = b"MSEQ"
RLE_VERSION = 1
_RLE_HEADER = struct.Struct("<4sBIII")

# 8-neighbourhood for boundaries, 4-connectivity for flood fill
_EIGHT = np.ones((3, 3), dtype=bool)
_FOUR = ndimage.generate_binary_structure(2, 1)

# ----------------------------------------------------------------------------
# Data classes
# ----------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class PixelPoint:
    # ordering is (x, y); row-major order is given by pixel_order()
    x: int
    y: int

    def row_major_key(self) -> Tuple[int, int]:
        return (self.y, self.x)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """One object's occupancy for one frame. ``bits`` is a read-only bool array (height, width)."""
    width: int
    height: int
    bits: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InvalidInputError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        bits = np.asarray(self.bits, dtype=bool)
        if bits.shape != (self.height, self.width):
            raise InvalidInputError(
                f"mask bits have shape {bits.shape}, expected {(self.height, self.width)}"
            )
        if bits is self.bits and bits.flags.writeable:
            bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    # constructors

    @classmethod
    def from_array(cls, array) -> "BinaryMask":
        arr = np.array(array, dtype=bool)
        if arr.ndim != 2:
            raise InvalidInputError(f"mask array must be 2-D, got {arr.ndim}-D")
        return cls(width=arr.shape[1], height=arr.shape[0], bits=arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(width=width, height=height, bits=np.zeros((max(height, 0), max(width, 0)), dtype=bool))

    @classmethod
    def from_pixels(cls, width: int, height: int, pixels: Iterable[PixelPoint]) -> "BinaryMask":
        arr = np.zeros((height, width), dtype=bool)
        for p in pixels:
            if not (0 <= p.x < width and 0 <= p.y < height):
                raise InvalidInputError(f"pixel {p} outside {width}x{height}")
            arr[p.y, p.x] = True
        return cls(width=width, height=height, bits=arr)

    # queries

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def contains(self, point: PixelPoint) -> bool:
        if not (0 <= point.x < self.width and 0 <= point.y < self.height):
            return False
        return bool(self.bits[point.y, point.x])

    def pixels(self) -> List[PixelPoint]:
        """Set pixels in row-major order."""
        ys, xs = np.nonzero(self.bits)
        return [PixelPoint(int(x), int(y)) for y, x in zip(ys, xs)]

    def translate(self, dx: int, dy: int) -> "BinaryMask":
        """Shift by (dx, dy); pixels leaving the frame are dropped."""
        out = np.zeros_like(self.bits)
        h, w = self.shape
        if abs(dx) >= w or abs(dy) >= h:
            return BinaryMask(w, h, out)
        src_y = slice(max(0, -dy), h - max(0, dy))
        src_x = slice(max(0, -dx), w - max(0, dx))
        dst_y = slice(max(0, dy), h - max(0, -dy))
        dst_x = slice(max(0, dx), w - max(0, -dx))
        out[dst_y, dst_x] = self.bits[src_y, src_x]
        return BinaryMask(w, h, out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash((self.width, self.height, np.packbits(self.bits).tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.width}x{self.height}, area={self.area})"


@dataclass(frozen=True, eq=False)
class DistanceField:
    width: int
    height: int
    values: np.ndarray  # float64 (height, width)

    def at(self, point: PixelPoint) -> float:
        return float(self.values[point.y, point.x])


# ----------------------------------------------------------------------------
# Mask algebra
# ----------------------------------------------------------------------------

def _check_same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise InvalidInputError(f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """|a∩b| / |a∪b|; two empty masks score 1.0."""
    _check_same_shape(a, b)
    union_count = np.count_nonzero(a.bits | b.bits)
    if union_count == 0:
        return 1.0
    return np.count_nonzero(a.bits & b.bits) / union_count


def intersect(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_same_shape(a, b)
    return BinaryMask(a.width, a.height, a.bits & b.bits)


def union(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    _check_same_shape(a, b)
    return BinaryMask(a.width, a.height, a.bits | b.bits)


def dilate(m: BinaryMask, radius: int) -> BinaryMask:
    """Grow by ``radius`` pixels (8-neighbourhood), clipped to the frame."""
    if radius < 0:
        raise InvalidInputError(f"dilation radius must be >= 0, got {radius}")
    if radius == 0 or m.is_empty:
        return m
    return BinaryMask(m.width, m.height, ndimage.binary_dilation(m.bits, structure=_EIGHT, iterations=radius))


# ----------------------------------------------------------------------------
# Boundary and distance transform
# ----------------------------------------------------------------------------

def boundary_map(m: BinaryMask) -> np.ndarray:
    """Bool map of mask pixels with a background pixel (or the image border) among their 8 neighbours."""
    interior = ndimage.binary_erosion(m.bits, structure=_EIGHT, border_value=0)
    return m.bits & ~interior


def boundary(m: BinaryMask) -> FrozenSet[PixelPoint]:
    ys, xs = np.nonzero(boundary_map(m))
    return frozenset(PixelPoint(int(x), int(y)) for y, x in zip(ys, xs))


def distance_to_nearest(targets: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest ``True`` pixel of ``targets``.

    The separable exact transform gives the nearest target index; the distance is
    then recomputed as sqrt(dx² + dy²) in float64 so that it matches a
    brute-force evaluation bit for bit.
    """
    if not targets.any():
        raise InvalidInputError("distance transform needs at least one target pixel")
    indices = ndimage.distance_transform_edt(~targets, return_distances=False, return_indices=True)
    rows, cols = np.indices(targets.shape)
    dy = (indices[0] - rows).astype(np.int64)
    dx = (indices[1] - cols).astype(np.int64)
    return np.sqrt((dx * dx + dy * dy).astype(np.float64))


def distance_to_boundary(m: BinaryMask) -> DistanceField:
    if m.is_empty:
        raise InvalidInputError("distance_to_boundary requires a non-empty mask")
    dist = distance_to_nearest(boundary_map(m))
    values = np.where(m.bits, dist, 0.0)
    values.setflags(write=False)
    return DistanceField(width=m.width, height=m.height, values=values)


# ----------------------------------------------------------------------------
# Flood fill
# ----------------------------------------------------------------------------

def flood_fill(labels: np.ndarray, seed: PixelPoint) -> BinaryMask:
    """4-connected region sharing the seed's label; label 0 is background and yields an empty mask."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InvalidInputError(f"label image must be 2-D, got {labels.ndim}-D")
    h, w = labels.shape
    if not (0 <= seed.x < w and 0 <= seed.y < h):
        raise InvalidInputError(f"seed {seed} outside {w}x{h} label image")
    value = labels[seed.y, seed.x]
    if value == 0:
        return BinaryMask.empty(w, h)
    components, _ = ndimage.label(labels == value, structure=_FOUR)
    return BinaryMask(w, h, components == components[seed.y, seed.x])


# ----------------------------------------------------------------------------
# Run-length encoding (MSEQ container)
# ----------------------------------------------------------------------------

def rle_runs(m: BinaryMask) -> List[int]:
    """Row-major runs, background first (a mask starting with a set pixel opens with a 0 run)."""
    flat = m.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def runs_to_mask(runs: Sequence[int], width: int, height: int) -> BinaryMask:
    runs_arr = np.asarray(runs, dtype=np.int64)
    if runs_arr.ndim != 1 or (runs_arr < 0).any():
        raise MalformedDataError("runs must be a flat list of non-negative integers")
    if int(runs_arr.sum()) != width * height:
        raise MalformedDataError(
            f"run total {int(runs_arr.sum())} does not match {width}x{height}={width * height}"
        )
    values = (np.arange(runs_arr.size) % 2) == 1
    flat = np.repeat(values, runs_arr)
    return BinaryMask(width, height, flat.reshape(height, width))


def encode_rle(m: BinaryMask) -> bytes:
    runs = rle_runs(m)
    header = _RLE_HEADER.pack(RLE_MAGIC, RLE_VERSION, m.width, m.height, len(runs))
    return header + np.asarray(runs, dtype="<u4").tobytes()


def decode_rle(data: bytes, width: Optional[int] = None, height: Optional[int] = None) -> BinaryMask:
    """Decode an MSEQ container; ``width``/``height``, when given, must agree with the header."""
    if len(data) < _RLE_HEADER.size:
        raise MalformedDataError("RLE container shorter than its header")
    magic, version, w, h, count = _RLE_HEADER.unpack_from(data, 0)
    if magic != RLE_MAGIC:
        raise MalformedDataError(f"bad RLE magic {magic!r}")
    if version != RLE_VERSION:
        raise MalformedDataError(f"unsupported RLE version {version}")
    if (width is not None and width != w) or (height is not None and height != h):
        raise MalformedDataError(f"RLE header says {w}x{h}, expected {width}x{height}")
    body = data[_RLE_HEADER.size:]
    if len(body) != 4 * count:
        raise MalformedDataError(f"RLE body holds {len(body)} bytes for {count} runs")
    if w < 1 or h < 1:
        raise MalformedDataError(f"RLE header has degenerate size {w}x{h}")
    runs = np.frombuffer(body, dtype="<u4")
    return runs_to_mask(runs, w, h)


# ----------------------------------------------------------------------------
# Mask clips
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MaskClip:
    """Per-frame, per-object masks of one video: ``data`` is bool (frames, objects, height, width)."""
    object_ids: Tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 4:
            raise InvalidInputError(f"clip data must be 4-D (T, O, H, W), got {data.ndim}-D")
        ids = tuple(int(i) for i in self.object_ids)
        if len(ids) != data.shape[1]:
            raise InvalidInputError(f"{len(ids)} object ids for {data.shape[1]} mask channels")
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate object ids {ids}")
        if data.shape[0] < 1 or data.shape[2] < 1 or data.shape[3] < 1:
            raise InvalidInputError(f"degenerate clip shape {data.shape}")
        if data is self.data and data.flags.writeable:
            data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "object_ids", ids)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_masks(cls, masks: Mapping[int, Sequence[BinaryMask]]) -> "MaskClip":
        """Build from {object id: per-frame masks}; ids are stored sorted."""
        if not masks:
            raise InvalidInputError("a clip needs at least one object")
        ids = sorted(masks)
        lengths = {len(masks[i]) for i in ids}
        if len(lengths) != 1:
            raise InvalidInputError(f"objects have different frame counts {sorted(lengths)}")
        shapes = {m.shape for i in ids for m in masks[i]}
        if len(shapes) != 1:
            raise InvalidInputError(f"masks have different dimensions {sorted(shapes)}")
        data = np.stack([np.stack([m.bits for m in masks[i]]) for i in ids], axis=1)
        return cls(object_ids=tuple(ids), data=data)

    @classmethod
    def from_label_frames(cls, labels: np.ndarray, object_ids: Optional[Sequence[int]] = None) -> "MaskClip":
        labels = np.asarray(labels)
        if labels.ndim != 3:
            raise InvalidInputError(f"label frames must be 3-D (T, H, W), got {labels.ndim}-D")
        if object_ids is None:
            object_ids = [int(v) for v in np.unique(labels) if v != 0]
        ids = tuple(sorted(int(i) for i in object_ids))
        data = np.stack([labels == i for i in ids], axis=1) if ids else np.zeros(
            (labels.shape[0], 0) + labels.shape[1:], dtype=bool
        )
        return cls(object_ids=ids, data=data)

    @property
    def frame_count(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[2]

    @property
    def width(self) -> int:
        return self.data.shape[3]

    def index_of(self, object_id: int) -> int:
        try:
            return self.object_ids.index(object_id)
        except ValueError:
            raise InvalidInputError(f"object {object_id} not in clip roster {self.object_ids}") from None

    def mask(self, frame: int, object_id: int) -> BinaryMask:
        if not 0 <= frame < self.frame_count:
            raise InvalidInputError(f"frame {frame} outside clip of {self.frame_count} frames")
        return BinaryMask(self.width, self.height, self.data[frame, self.index_of(object_id)])

    def object_masks(self, object_id: int) -> List[BinaryMask]:
        j = self.index_of(object_id)
        return [BinaryMask(self.width, self.height, self.data[t, j]) for t in range(self.frame_count)]

    def is_disjoint(self) -> bool:
        return bool((self.data.sum(axis=1) <= 1).all())

    def to_label_frames(self) -> np.ndarray:
        """Indexed frames (pixel = object id); requires pairwise disjoint objects."""
        if not self.is_disjoint():
            raise InvalidInputError("objects overlap; indexed label frames would lose pixels")
        labels = np.zeros((self.frame_count, self.height, self.width), dtype=np.uint8)
        for j, obj in enumerate(self.object_ids):
            labels[self.data[:, j]] = obj
        return labels

    def same_layout(self, other: "MaskClip") -> bool:
        return self.object_ids == other.object_ids and self.data.shape == other.data.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, MaskClip):
            return NotImplemented
        return self.same_layout(other) and np.array_equal(self.data, other.data)

    def __hash__(self) -> int:
        return hash((self.object_ids, self.data.shape, np.packbits(self.data).tobytes()))

    def __repr__(self) -> str:
        return (f"MaskClip(frames={self.frame_count}, objects={list(self.object_ids)}, "
                f"{self.width}x{self.height})")


def require_same_layout(pred: MaskClip, gt: MaskClip) -> None:
    if pred.object_ids != gt.object_ids:
        raise InvalidInputError(f"object rosters differ: {list(pred.object_ids)} vs {list(gt.object_ids)}")
    if pred.data.shape != gt.data.shape:
        raise InvalidInputError(f"clip shapes differ: {pred.data.shape} vs {gt.data.shape}")


def masks_by_object(clip: MaskClip) -> Dict[int, List[BinaryMask]]:
    return {obj: clip.object_masks(obj) for obj in clip.object_ids}
