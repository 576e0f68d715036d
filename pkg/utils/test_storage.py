#!/usr/bin/env python3
"""
Тесты форматов хранения: PGM, MSEQ, манифесты, аннотации, снимки параметров
"""

import sys
import os
import struct

import numpy as np
import pytest

# Добавляем корень проекта в путь для импорта
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import InvalidInputError, MalformedDataError
from modules.annotator import PointAnnotation
from modules.fusion import KeyframeSet
from modules.masks import BinaryMask, MaskClip
from modules.storage import (
    RunManifest, decode_params, encode_params, load_params, read_annotations, read_clip, read_clips,
    read_counts, read_json, read_keyframes, read_label_frames, read_pgm, read_run_manifest, read_yaml,
    save_params, write_annotations, write_clip, write_counts, write_json, write_keyframes, write_pgm,
    write_run_manifest, write_suite,
)
from modules.synth import ObjectSpec, SceneConfig, gen_scene


@pytest.fixture
def scene():
    cfg = SceneConfig(width=24, height=20, frames=6, objects=[
        ObjectSpec(shape="ellipse", size=8.0), ObjectSpec(shape="rectangle", size=(6.0, 5.0)),
    ])
    return gen_scene(cfg, seed=11)


# ----------------------------------------------------------------------------
# Label frames
# ----------------------------------------------------------------------------

def test_pgm_round_trip(tmp_path):
    frame = np.arange(60, dtype=np.uint8).reshape(6, 10)
    path = tmp_path / "00000.pgm"
    write_pgm(path, frame)
    assert path.read_bytes().startswith(b"P5")
    assert np.array_equal(read_pgm(path), frame)


def test_pgm_rejects_bad_input(tmp_path):
    with pytest.raises(InvalidInputError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 2), dtype=np.int32))
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"not an image")
    with pytest.raises(MalformedDataError):
        read_pgm(bad)


def test_label_frames_must_be_contiguous(tmp_path):
    write_pgm(tmp_path / "00000.pgm", np.zeros((2, 2), dtype=np.uint8))
    write_pgm(tmp_path / "00002.pgm", np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(MalformedDataError):
        read_label_frames(tmp_path, 2)


# ----------------------------------------------------------------------------
# Clips and suites
# ----------------------------------------------------------------------------

def test_clip_round_trip(tmp_path, scene):
    write_clip(tmp_path / "c", scene.gt, "c", labels=scene.labels, points=scene.points, count=2, seed=11)
    stored = read_clip(tmp_path / "c")
    assert stored.name == "c"
    assert stored.manifest.count == 2 and stored.manifest.seed == 11
    assert not stored.manifest.predicted
    assert stored.masks == scene.gt
    assert np.array_equal(stored.labels, scene.labels)
    assert read_annotations(tmp_path / "c" / "points.jsonl") == list(scene.points)


def test_overlapping_prediction_is_stored_losslessly(tmp_path):
    full = BinaryMask.from_array(np.ones((3, 4), dtype=bool))
    corner = BinaryMask.from_array(np.pad(np.ones((1, 1), dtype=bool), ((0, 2), (0, 3))))
    clip = MaskClip.from_masks({1: [full, corner], 2: [corner, full]})
    write_clip(tmp_path / "p", clip, "p", predicted=True)
    assert (tmp_path / "p" / "masks" / "obj_002" / "00001.rle").is_file()
    assert read_clip(tmp_path / "p").masks == clip


def test_clip_dimension_mismatch_is_malformed(tmp_path, scene):
    write_clip(tmp_path / "c", scene.gt, "c", labels=scene.labels)
    manifest = read_json(tmp_path / "c" / "manifest.json")
    manifest["width"] = 30
    write_json(tmp_path / "c" / "manifest.json", manifest)
    with pytest.raises(MalformedDataError):
        read_clip(tmp_path / "c")


def test_manifest_with_unknown_field_is_malformed(tmp_path, scene):
    write_clip(tmp_path / "c", scene.gt, "c", labels=scene.labels)
    manifest = read_json(tmp_path / "c" / "manifest.json")
    manifest["colour"] = "red"
    write_json(tmp_path / "c" / "manifest.json", manifest)
    with pytest.raises(MalformedDataError):
        read_clip(tmp_path / "c")


def test_suite_round_trip(tmp_path, scene):
    for name in ("a", "b"):
        write_clip(tmp_path / name, scene.gt, name, labels=scene.labels, count=2)
    write_suite(tmp_path, [("b", 2), ("a", 2)], seed=3)
    clips = read_clips(tmp_path)
    assert [c.name for c in clips] == ["b", "a"]
    assert read_clips(tmp_path / "a")[0].name == "a"
    with pytest.raises(InvalidInputError):
        read_clips(tmp_path / "missing")


def test_keyframes_round_trip(tmp_path, scene):
    kf = KeyframeSet.from_clip(scene.gt, 2)
    write_keyframes(tmp_path / "kf", kf)
    assert sorted(p.name for p in (tmp_path / "kf").iterdir()) == ["00000.pgm", "00002.pgm", "00004.pgm"]
    assert read_keyframes(tmp_path / "kf", scene.gt.object_ids, scene.frame_count) == kf


# ----------------------------------------------------------------------------
# Annotations, counts, JSON and YAML
# ----------------------------------------------------------------------------

def test_annotations_file(tmp_path):
    rows = [PointAnnotation(frame=0, object=1, x=12.5, y=50.0, video="v"),
            PointAnnotation(frame=3, object=2, x=0.0, y=100.0, video="v")]
    path = write_annotations(tmp_path / "a.jsonl", rows)
    assert path.read_text(encoding="utf-8").splitlines()[0] == \
        '{"video": "v", "frame": 0, "object": 1, "x": 12.5, "y": 50.0}'
    assert read_annotations(path) == rows


def test_bad_annotation_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"frame": 0, "object": 1, "x": 5.0}\n', encoding="utf-8")
    with pytest.raises(MalformedDataError):
        read_annotations(path)
    path.write_text('{"frame": 0, "object": 1, "x": 500.0, "y": 1.0}\n', encoding="utf-8")
    with pytest.raises(MalformedDataError):
        read_annotations(path)
    with pytest.raises(InvalidInputError):
        read_annotations(tmp_path / "none.jsonl")


def test_counts_file(tmp_path):
    write_counts(tmp_path / "counts.json", {"a": 3, "b": 0})
    assert read_counts(tmp_path / "counts.json") == {"a": 3, "b": 0}
    write_json(tmp_path / "bad.json", {"a": 1.5})
    with pytest.raises(MalformedDataError):
        read_counts(tmp_path / "bad.json")
    (tmp_path / "broken.json").write_text("{", encoding="utf-8")
    with pytest.raises(MalformedDataError):
        read_json(tmp_path / "broken.json")


def test_yaml_reader(tmp_path):
    (tmp_path / "c.yaml").write_text("kind: scene\nobjects:\n  - shape: ellipse\n", encoding="utf-8")
    assert read_yaml(tmp_path / "c.yaml") == {"kind": "scene", "objects": [{"shape": "ellipse"}]}
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n", encoding="utf-8")
    with pytest.raises(MalformedDataError):
        read_yaml(tmp_path / "bad.yaml")


def test_run_manifest_round_trip(tmp_path):
    manifest = RunManifest(command="synth", args={"seed": 3, "out": "x"}, outputs=["manifest.json"])
    write_run_manifest(tmp_path, manifest)
    assert read_run_manifest(tmp_path) == manifest
    assert read_run_manifest(tmp_path / "run.json").args == {"seed": 3, "out": "x"}


# ----------------------------------------------------------------------------
# Parameter snapshots
# ----------------------------------------------------------------------------

def test_snapshot_layout_and_round_trip(tmp_path):
    tensors = {"w": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([0.5, -1.0]), "s": np.array(2.0)}
    data = encode_params(tensors)
    assert data[:4] == b"TMPW" and data[4] == 1
    assert struct.unpack_from("<I", data, 5) == (3,)
    decoded = decode_params(data)
    assert list(decoded) == ["w", "b", "s"]
    for name, value in tensors.items():
        assert decoded[name].shape == value.shape
        assert np.array_equal(decoded[name], value)
    save_params(tmp_path / "p.bin", tensors)
    assert np.array_equal(load_params(tmp_path / "p.bin")["w"], tensors["w"])


def test_snapshot_keeps_scalar_rank_and_array_order():
    data = encode_params({"s": np.array(2.0)})
    # header, u16 name length, "s", rank byte, one float64
    assert len(data) == 9 + 2 + 1 + 1 + 8
    assert data[12] == 0
    assert decode_params(data)["s"].shape == ()
    fortran = np.asfortranarray(np.arange(6, dtype=float).reshape(2, 3))
    assert np.array_equal(decode_params(encode_params({"w": fortran}))["w"], fortran)


def test_snapshot_rejects_malformed_data():
    good = encode_params({"w": np.ones((2, 2))})
    with pytest.raises(MalformedDataError):
        decode_params(b"XXXX" + good[4:])
    with pytest.raises(MalformedDataError):
        decode_params(good[:4] + bytes([2]) + good[5:])
    with pytest.raises(MalformedDataError):
        decode_params(good[:-3])
    with pytest.raises(MalformedDataError):
        decode_params(good + b"\x00")
    with pytest.raises(MalformedDataError):
        decode_params(b"TM")
