#!/usr/bin/env python3
"""
Тесты полуавтоматической разметки точками
"""

import sys
import os

import numpy as np
import pytest
from scipy import stats

# Добавляем корень проекта в путь для импорта
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from core.errors import AnnotationError, InvalidInputError
from modules.annotator import (
    CandidateSet, PointAnnotation, annotate_clip, group_points, percent_to_pixel, pixel_to_percent,
    sample_candidates, score_candidates, select_point, to_annotation,
)
from modules.masks import BinaryMask, MaskClip, PixelPoint, distance_to_boundary, flood_fill, iou
from modules.synth import FloodFillOracle, ObjectSpec, SceneConfig, gen_scene, segment_oracle


class FixedOracle:
    """Returns a prepared mask per candidate point."""

    def __init__(self, answers, fallback):
        self.answers = answers
        self.fallback = fallback
        self.calls = []

    def segment(self, frame, point):
        self.calls.append((frame, point))
        return self.answers.get(point, self.fallback)


class BrokenOracle:
    def segment(self, frame, point):
        raise RuntimeError("model unavailable")


def disk(size):
    ys, xs = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    return BinaryMask.from_array((xs - c) ** 2 + (ys - c) ** 2 <= (size / 2) ** 2)


# ----------------------------------------------------------------------------
# Coordinates
# ----------------------------------------------------------------------------

def test_pixel_percent_round_trip():
    for width, height in ((7, 5), (64, 48), (3, 1)):
        for y in range(height):
            for x in range(width):
                p = PixelPoint(x, y)
                assert percent_to_pixel(*pixel_to_percent(p, width, height), width, height) == p
                a = to_annotation(p, 0, 1, width, height)
                assert percent_to_pixel(a.x, a.y, width, height) == p


def test_annotation_coordinates_use_pixel_centres():
    a = to_annotation(PixelPoint(0, 0), 2, 7, 3, 4, video="v")
    assert (a.frame, a.object, a.video) == (2, 7, "v")
    assert (a.x, a.y) == (16.67, 12.5)
    assert percent_to_pixel(100.0, 100.0, 3, 4) == PixelPoint(2, 3)


def test_annotation_rejects_out_of_range_percent():
    with pytest.raises(InvalidInputError):
        PointAnnotation(frame=0, object=1, x=100.5, y=3.0)


# ----------------------------------------------------------------------------
# Candidate sampling
# ----------------------------------------------------------------------------

def test_single_pixel_mask_yields_copies():
    m = BinaryMask.from_pixels(4, 4, [PixelPoint(2, 1)])
    cands = sample_candidates(m, 6, np.random.default_rng(0))
    assert cands.points == (PixelPoint(2, 1),) * 6


def test_three_by_three_block_samples_the_centre():
    m = BinaryMask.from_array(np.ones((3, 3), dtype=bool))
    cands = sample_candidates(m, 20, np.random.default_rng(1))
    assert set(cands.points) == {PixelPoint(1, 1)}
    assert set(cands.weights) == {1.0}


def test_thin_mask_falls_back_to_uniform():
    arr = np.zeros((5, 9), dtype=bool)
    arr[2, 1:8] = True
    m = BinaryMask.from_array(arr)
    cands = sample_candidates(m, 200, np.random.default_rng(2))
    assert all(m.contains(p) for p in cands.points)
    assert len(set(cands.points)) > 1


def test_sampling_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        sample_candidates(BinaryMask.empty(3, 3), 2, np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        sample_candidates(BinaryMask.from_array(np.ones((2, 2), dtype=bool)), 0, np.random.default_rng(0))


def test_sampling_distribution_matches_boundary_distance():
    m = disk(32)
    weights = distance_to_boundary(m).values
    draws = 100_000
    cands = sample_candidates(m, draws, np.random.default_rng(77))
    counts = np.zeros_like(weights)
    for p in cands.points:
        counts[p.y, p.x] += 1
    assert (counts[weights == 0] == 0).all()
    support = weights > 0
    expected = draws * weights[support] / weights[support].sum()
    result = stats.chisquare(counts[support], expected)
    assert result.pvalue > 0.01


# ----------------------------------------------------------------------------
# Point selection
# ----------------------------------------------------------------------------

def test_select_point_picks_unique_maximiser():
    gt = BinaryMask.from_array(np.ones((4, 4), dtype=bool))
    cands = CandidateSet(points=(PixelPoint(0, 0), PixelPoint(1, 1), PixelPoint(2, 2)), weights=(1.0, 1.0, 1.0))
    oracle = FixedOracle({PixelPoint(1, 1): gt}, BinaryMask.empty(4, 4))
    assert select_point(gt, cands, oracle, 0) == PixelPoint(1, 1)
    assert len(oracle.calls) == 3


def test_select_point_ties_go_to_first_candidate():
    gt = BinaryMask.from_array(np.ones((4, 4), dtype=bool))
    cands = CandidateSet(points=(PixelPoint(3, 3), PixelPoint(0, 0)), weights=(1.0, 1.0))
    assert select_point(gt, cands, FixedOracle({}, gt), 0) == PixelPoint(3, 3)


def test_select_point_rejects_empty_candidates():
    gt = BinaryMask.from_array(np.ones((2, 2), dtype=bool))
    with pytest.raises(InvalidInputError):
        select_point(gt, CandidateSet(points=(), weights=()), FixedOracle({}, gt), 0)


def test_oracle_failure_is_an_annotation_error():
    gt = BinaryMask.from_array(np.ones((2, 2), dtype=bool))
    cands = CandidateSet(points=(PixelPoint(0, 0),), weights=(1.0,))
    with pytest.raises(AnnotationError):
        score_candidates(gt, cands, BrokenOracle(), 0)


def test_selection_is_optimal_under_exhaustive_rescoring():
    for instance in range(50):
        rng = np.random.default_rng(1000 + instance)
        coarse = rng.integers(0, 4, size=(4, 4)).astype(np.uint8)
        labels = np.kron(coarse, np.ones((3, 3), dtype=np.uint8))
        gt_bits = (labels == 1) | (labels == 2)
        if not gt_bits.any():
            continue
        gt = BinaryMask.from_array(gt_bits)
        oracle = FloodFillOracle(labels[None])
        cands = sample_candidates(gt, 5, rng)
        best = select_point(gt, cands, oracle, 0)
        best_score = iou(flood_fill(labels, best), gt)
        for p in cands.points:
            assert gt.contains(p)
            assert best_score >= iou(flood_fill(labels, p), gt)


# ----------------------------------------------------------------------------
# Clip annotation
# ----------------------------------------------------------------------------

def test_single_pixel_objects_are_annotated_exactly():
    labels = np.zeros((2, 4, 5), dtype=np.uint8)
    labels[0, 1, 3] = 1
    labels[1, 2, 0] = 1
    labels[1, 3, 4] = 2
    gt = MaskClip.from_label_frames(labels, [1, 2])
    batch = annotate_clip(gt, 3, FloodFillOracle(labels), seed=5)
    assert not batch.failures
    points = {(a.frame, a.object): percent_to_pixel(a.x, a.y, 5, 4) for a in batch}
    assert points == {(0, 1): PixelPoint(3, 1), (1, 1): PixelPoint(0, 2), (1, 2): PixelPoint(4, 3)}


def test_annotation_is_deterministic_and_inside_masks():
    cfg = SceneConfig(width=40, height=30, frames=10,
                      objects=[ObjectSpec(shape="ellipse", size=10.0), ObjectSpec(shape="rectangle", size=(8.0, 6.0))])
    clip = gen_scene(cfg, seed=3)
    first = annotate_clip(clip.gt, 5, segment_oracle(clip), seed=9, video="scene")
    second = annotate_clip(clip.gt, 5, segment_oracle(clip), seed=9, video="scene")
    assert first.annotations == second.annotations
    expected = {(t, o) for t in range(clip.frame_count) for o in clip.gt.object_ids
                if not clip.gt.mask(t, o).is_empty}
    assert {(a.frame, a.object) for a in first} == expected
    grouped = group_points(first.annotations, clip.width, clip.height)
    for a in first:
        assert clip.gt.mask(a.frame, a.object).contains(percent_to_pixel(a.x, a.y, clip.width, clip.height))
    assert sorted(grouped) == sorted({a.frame for a in first})


def test_convex_objects_reach_full_iou():
    cfg = SceneConfig(width=32, height=32, frames=4,
                      objects=[ObjectSpec(shape="ellipse", size=12.0, start=(16.0, 16.0), velocity=(1.0, 0.0))])
    clip = gen_scene(cfg, seed=0)
    oracle = segment_oracle(clip)
    batch = annotate_clip(clip.gt, 5, oracle, seed=1)
    for a in batch:
        p = percent_to_pixel(a.x, a.y, clip.width, clip.height)
        assert iou(oracle.segment(a.frame, p), clip.gt.mask(a.frame, a.object)) == 1.0


def test_oracle_failures_are_collected():
    labels = np.ones((2, 3, 3), dtype=np.uint8)
    gt = MaskClip.from_label_frames(labels, [1])
    batch = annotate_clip(gt, 2, BrokenOracle(), seed=0)
    assert len(batch) == 0
    assert [(f.frame, f.object) for f in batch.failures] == [(0, 1), (1, 1)]
    with pytest.raises(InvalidInputError):
        annotate_clip(gt, 0, BrokenOracle(), seed=0)
