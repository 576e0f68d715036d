#!/usr/bin/env python3
"""
Storage module for the video pointing toolkit

Every on-disk format: indexed PGM label frames, MSEQ mask files, clip and
suite manifests, annotation lines, counts, reports, run manifests and the
TMPW parameter snapshot container. JSON output uses a fixed key order and
carries no timestamps, so reruns produce byte-identical files.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from PIL import Image
from pydantic import BaseModel, ConfigDict, ValidationError

from core.config import TOOL_NAME, TOOL_VERSION
from core.errors import InvalidInputError, MalformedDataError
from modules.annotator import PointAnnotation
from modules.fusion import KeyframeSet
from modules.masks import BinaryMask, MaskClip, decode_rle, encode_rle

logger = logging.getLogger("storage")

PathLike = Union[str, Path]

CLIP_MANIFEST = "manifest.json"
SUITE_MANIFEST = "suite.json"
RUN_MANIFEST = "run.json"
LABELS_DIR = "labels"
MASKS_DIR = "masks"
POINTS_FILE = "points.jsonl"

PARAMS_MAGIC = b"TMPW"
PARAMS_VERSION = 1

# ----------------------------------------------------------------------------
# Manifests
# ----------------------------------------------------------------------------

class ClipManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["clip"] = "clip"
    name: str
    width: int
    height: int
    frames: int
    objects: List[int]
    count: Optional[int] = None
    seed: Optional[int] = None
    predicted: bool = False
    tool: str = TOOL_NAME
    version: str = TOOL_VERSION


class SuiteEntry(BaseModel):
    name: str
    count: int


class SuiteManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["suite"] = "suite"
    clips: List[SuiteEntry]
    seed: Optional[int] = None
    tool: str = TOOL_NAME
    version: str = TOOL_VERSION


class RunManifest(BaseModel):
    """Resolved invocation of one command; enough to replay it."""
    model_config = ConfigDict(extra="forbid")

    tool: str = TOOL_NAME
    version: str = TOOL_VERSION
    command: str
    args: Dict[str, Any]
    outputs: List[str] = []


# ----------------------------------------------------------------------------
# Generic helpers
# ----------------------------------------------------------------------------

def write_json(path: PathLike, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedDataError(f"{path}: invalid JSON ({e})") from e


def read_yaml(path: PathLike) -> Any:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"file not found: {path}")
    try:
        return yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise MalformedDataError(f"{path}: invalid YAML ({e})") from e


def _model(cls, data: Any, path: Path):
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        raise MalformedDataError(f"{path}: {e.error_count()} invalid field(s): {e.errors()[0]['msg']}") from e


# ----------------------------------------------------------------------------
# Label frames (binary PGM, pixel = object id)
# ----------------------------------------------------------------------------

def frame_name(index: int, suffix: str) -> str:
    return f"{index:05d}{suffix}"


def write_pgm(path: PathLike, frame: np.ndarray) -> None:
    arr = np.asarray(frame)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise InvalidInputError(f"label frame must be 2-D uint8, got {arr.ndim}-D {arr.dtype}")
    Image.fromarray(arr).save(str(path), format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    try:
        with Image.open(str(path)) as img:
            if img.format != "PPM" or img.mode != "L":
                raise MalformedDataError(f"{path}: expected a binary PGM (P5, maxval 255), got {img.format}/{img.mode}")
            return np.array(img, dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise MalformedDataError(f"{path}: unreadable PGM ({e})") from e


def write_label_frames(directory: PathLike, labels: np.ndarray) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(labels):
        path = directory / frame_name(t, ".pgm")
        write_pgm(path, frame)
        paths.append(path)
    return paths


def read_indexed_frames(directory: PathLike) -> Dict[int, np.ndarray]:
    """{frame index: label frame} for every NNNNN.pgm in ``directory``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InvalidInputError(f"directory not found: {directory}")
    frames = {}
    for path in sorted(directory.glob("*.pgm")):
        try:
            index = int(path.stem)
        except ValueError:
            raise MalformedDataError(f"{path}: frame file name is not an index") from None
        frames[index] = read_pgm(path)
    if not frames:
        raise InvalidInputError(f"no .pgm frames in {directory}")
    return dict(sorted(frames.items()))


def read_label_frames(directory: PathLike, frame_count: int) -> np.ndarray:
    frames = read_indexed_frames(directory)
    if list(frames) != list(range(frame_count)):
        raise MalformedDataError(f"{directory}: expected frames 0..{frame_count - 1}, found {list(frames)}")
    return np.stack(list(frames.values()))


# ----------------------------------------------------------------------------
# Mask files (one MSEQ container per object and frame)
# ----------------------------------------------------------------------------

def write_mask_dir(directory: PathLike, clip: MaskClip) -> None:
    directory = Path(directory)
    for obj in clip.object_ids:
        obj_dir = directory / f"obj_{obj:03d}"
        obj_dir.mkdir(parents=True, exist_ok=True)
        for t, m in enumerate(clip.object_masks(obj)):
            (obj_dir / frame_name(t, ".rle")).write_bytes(encode_rle(m))


def read_mask_dir(directory: PathLike, object_ids: Sequence[int], frame_count: int,
                  width: int, height: int) -> MaskClip:
    directory = Path(directory)
    masks: Dict[int, List[BinaryMask]] = {}
    for obj in object_ids:
        obj_dir = directory / f"obj_{obj:03d}"
        per_frame = []
        for t in range(frame_count):
            path = obj_dir / frame_name(t, ".rle")
            if not path.is_file():
                raise MalformedDataError(f"missing mask file {path}")
            per_frame.append(decode_rle(path.read_bytes(), width, height))
        masks[obj] = per_frame
    return MaskClip.from_masks(masks)


# ----------------------------------------------------------------------------
# Clip and suite directories
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StoredClip:
    path: Path
    manifest: ClipManifest
    masks: MaskClip
    labels: Optional[np.ndarray]

    @property
    def name(self) -> str:
        return self.manifest.name


def write_clip(directory: PathLike, clip: MaskClip, name: str, labels: Optional[np.ndarray] = None,
               points: Optional[Sequence[PointAnnotation]] = None, count: Optional[int] = None,
               seed: Optional[int] = None, predicted: bool = False) -> Path:
    """Clip directory; predictions also get lossless per-object mask files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if labels is None and clip.is_disjoint():
        labels = clip.to_label_frames()
    if labels is not None:
        write_label_frames(directory / LABELS_DIR, labels)
    if predicted or labels is None:
        write_mask_dir(directory / MASKS_DIR, clip)
    if points is not None:
        write_annotations(directory / POINTS_FILE, points)
    manifest = ClipManifest(name=name, width=clip.width, height=clip.height, frames=clip.frame_count,
                            objects=list(clip.object_ids), count=count, seed=seed, predicted=predicted)
    write_json(directory / CLIP_MANIFEST, manifest.model_dump())
    return directory


def read_clip(directory: PathLike) -> StoredClip:
    directory = Path(directory)
    manifest_path = directory / CLIP_MANIFEST
    manifest = _model(ClipManifest, read_json(manifest_path), manifest_path)
    labels = None
    if (directory / LABELS_DIR).is_dir():
        labels = read_label_frames(directory / LABELS_DIR, manifest.frames)
        if labels.shape[1:] != (manifest.height, manifest.width):
            raise MalformedDataError(f"{directory}: label frames are {labels.shape[1:]}, manifest says "
                                     f"{(manifest.height, manifest.width)}")
    if (directory / MASKS_DIR).is_dir():
        masks = read_mask_dir(directory / MASKS_DIR, manifest.objects, manifest.frames,
                              manifest.width, manifest.height)
    elif labels is not None:
        masks = MaskClip.from_label_frames(labels, manifest.objects)
    else:
        raise MalformedDataError(f"{directory}: neither {LABELS_DIR}/ nor {MASKS_DIR}/ present")
    return StoredClip(path=directory, manifest=manifest, masks=masks, labels=labels)


def write_suite(directory: PathLike, entries: Sequence[Tuple[str, int]], seed: Optional[int]) -> Path:
    manifest = SuiteManifest(clips=[SuiteEntry(name=n, count=c) for n, c in entries], seed=seed)
    return write_json(Path(directory) / SUITE_MANIFEST, manifest.model_dump())


def clip_dirs(path: PathLike) -> List[Path]:
    """Clip directories under ``path``: the suite's clips in manifest order, or ``path`` itself."""
    path = Path(path)
    if (path / SUITE_MANIFEST).is_file():
        suite = _model(SuiteManifest, read_json(path / SUITE_MANIFEST), path / SUITE_MANIFEST)
        return [path / entry.name for entry in suite.clips]
    if (path / CLIP_MANIFEST).is_file():
        return [path]
    raise InvalidInputError(f"{path} is neither a clip nor a suite directory")


def read_clips(path: PathLike) -> List[StoredClip]:
    return [read_clip(d) for d in clip_dirs(path)]


def read_keyframes(directory: PathLike, object_ids: Sequence[int], frame_count: int) -> KeyframeSet:
    """Keyframe masks from indexed PGM frames named by their keyframe index."""
    frames = read_indexed_frames(directory)
    indices = tuple(frames)
    masks = {obj: tuple(BinaryMask.from_array(frames[t] == obj) for t in indices) for obj in object_ids}
    return KeyframeSet(frame_count=frame_count, indices=indices, masks=masks)


def write_keyframes(directory: PathLike, kf: KeyframeSet) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = kf.shape
    for i, t in enumerate(kf.indices):
        frame = np.zeros((h, w), dtype=np.uint8)
        for obj, masks in kf.masks.items():
            frame[masks[i].bits & (frame == 0)] = obj
        write_pgm(directory / frame_name(t, ".pgm"), frame)


# ----------------------------------------------------------------------------
# Annotation lines and counts
# ----------------------------------------------------------------------------

def annotation_record(a: PointAnnotation) -> Dict[str, Any]:
    return {"video": a.video, "frame": a.frame, "object": a.object, "x": a.x, "y": a.y}


def write_annotations(path: PathLike, annotations: Sequence[PointAnnotation]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(annotation_record(a), ensure_ascii=False) for a in annotations]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def read_annotations(path: PathLike) -> List[PointAnnotation]:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(PointAnnotation(frame=int(rec["frame"]), object=int(rec["object"]),
                                       x=float(rec["x"]), y=float(rec["y"]), video=str(rec.get("video", ""))))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise MalformedDataError(f"{path}:{lineno}: bad annotation line ({e})") from e
    return out


def read_counts(path: PathLike) -> Dict[str, int]:
    data = read_json(path)
    if not isinstance(data, dict) or not all(isinstance(v, int) and not isinstance(v, bool) for v in data.values()):
        raise MalformedDataError(f"{path}: expected an object mapping clip names to integers")
    return {str(k): int(v) for k, v in data.items()}


def write_counts(path: PathLike, counts: Mapping[str, int]) -> Path:
    return write_json(path, {name: int(c) for name, c in counts.items()})


# ----------------------------------------------------------------------------
# Run manifests
# ----------------------------------------------------------------------------

def write_run_manifest(directory: PathLike, manifest: RunManifest) -> Path:
    return write_json(Path(directory) / RUN_MANIFEST, manifest.model_dump())


def read_run_manifest(path: PathLike) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / RUN_MANIFEST
    return _model(RunManifest, read_json(path), path)


# ----------------------------------------------------------------------------
# Parameter snapshots
# ----------------------------------------------------------------------------

def encode_params(tensors: Mapping[str, np.ndarray]) -> bytes:
    """TMPW container: magic, version, count, then (name, rank, dims, <f8 data) per tensor."""
    parts = [struct.pack("<4sBI", PARAMS_MAGIC, PARAMS_VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_params(data: bytes) -> Dict[str, np.ndarray]:
    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise MalformedDataError("parameter snapshot is truncated")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    offset = 0
    magic, version, count = take("<4sBI")
    if magic != PARAMS_MAGIC:
        raise MalformedDataError(f"bad snapshot magic {magic!r}")
    if version != PARAMS_VERSION:
        raise MalformedDataError(f"unsupported snapshot version {version}")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = take(f"<{name_len}s")[0].decode("utf-8")
        (rank,) = take("<B")
        dims = take(f"<{rank}I") if rank else ()
        n = int(np.prod(dims)) if dims else 1
        values = take(f"<{n}d")
        tensors[name] = np.array(values, dtype=np.float64).reshape(dims)
    if offset != len(data):
        raise MalformedDataError(f"{len(data) - offset} trailing bytes after {count} tensors")
    return tensors


def save_params(path: PathLike, tensors: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_params(tensors))
    return path


def load_params(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"file not found: {path}")
    return decode_params(path.read_bytes())
