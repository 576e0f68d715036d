#!/usr/bin/env python3
"""
Приемочные проверки на синтетических наборах: слияние, абляции, подсчет
"""

import sys
import os
from pathlib import Path

import pytest

# Добавляем корень проекта в путь для импорта
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from cli import main
from core.config import EXIT_OK
from modules.benchmark import BENCHMARK_NOISE, BenchmarkConfig, GridSpec, grid_points, sweep
from modules.fusion import FusionConfig, KeyframeSet, fuse_clip
from modules.metrics import counting
from modules.storage import read_json, read_yaml, write_counts
from modules.synth import (
    COUNTING_COUNTS, SuiteConfig, benchmark_suite, counting_suite, exact_propagator, generate, noisy_propagator,
    suite_counts,
)

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def benchmark_clips():
    cfg = BenchmarkConfig.model_validate(read_yaml(ROOT / "configs" / "sweep_strategy.yaml"))
    return cfg, [(c.name, c.gt) for c in generate(cfg.suite, cfg.seed)]


def test_exact_fusion_reproduces_twenty_clips():
    clips = benchmark_suite(SuiteConfig(kind="benchmark", clips=20), seed=0)
    for k in (3, 5, 10):
        for clip in clips:
            pred = fuse_clip(KeyframeSet.from_clip(clip.gt, k), exact_propagator(clip),
                             FusionConfig(k=k, strategy="bidirectional"))
            assert pred == clip.gt, (clip.name, k)


def test_bidirectional_beats_every_naive_strategy(benchmark_clips):
    cfg, clips = benchmark_clips
    assert len(clips) == 100
    assert cfg.noise == BENCHMARK_NOISE
    result = sweep(clips, grid_points(cfg.grid, cfg.noise), cfg.propagator, cfg.seed,
                   dataset=cfg.name, spill=cfg.noise.spill)
    scores = {r.strategy: r.jf for r in result.reports}
    assert len(scores) == 6
    for strategy, score in scores.items():
        assert scores["bidirectional"] >= score, (strategy, scores)
    assert result.summary()[0]["strategy"] == "bidirectional"


def test_tau_has_a_small_effect(benchmark_clips):
    cfg, clips = benchmark_clips
    grid = GridSpec(strategy=["bidirectional"], k=[5], tau=[0.0, 0.3, 0.5, 0.7, 0.9])
    result = sweep(clips, grid_points(grid, cfg.noise), "noisy", cfg.seed, spill=cfg.noise.spill)
    scores = [r.jf for r in result.reports]
    assert max(scores) - min(scores) <= 0.05, scores


def test_left_dropout_falls_back_to_right_propagation():
    clips = benchmark_suite(SuiteConfig(kind="benchmark", clips=5), seed=1)
    k = 5
    for clip in clips:
        prop = noisy_propagator(clip, jitter=0.3, dropout=1.0, seed=4, direction="forward", stream=clip.name)
        kf = KeyframeSet.from_clip(clip.gt, k)
        pred = fuse_clip(kf, prop, FusionConfig(k=k))
        for obj in clip.gt.object_ids:
            masks = kf.masks[obj]
            for i, (a, b) in enumerate(zip(kf.indices, kf.indices[1:])):
                for n in range(a + 1, b):
                    assert pred.mask(n, obj) == prop.propagate(b, masks[i + 1], n)


def test_counting_fixture_scores(tmp_path):
    clips = counting_suite(SuiteConfig.model_validate(read_yaml(ROOT / "configs" / "counting.yaml")), seed=0)
    truth = suite_counts(clips)
    assert truth == list(COUNTING_COUNTS)
    assert min(truth) == 2 and max(truth) == 13

    offsets = [0, 1, 0, -2, 0, 0, 3, 0, 0, -1]
    predicted = [c + d for c, d in zip(truth, offsets)]
    score = counting(predicted, truth)
    assert score.mae == 0.7
    assert score.ema == 60.0

    suite = tmp_path / "counting"
    assert main(["synth", str(ROOT / "configs" / "counting.yaml"), "--seed", "0", "--out", str(suite)]) == EXIT_OK
    counts = write_counts(tmp_path / "counts.json", {c.name: p for c, p in zip(clips, predicted)})
    out = tmp_path / "eval"
    assert main(["eval", str(suite), str(suite), "--counts", str(counts), "--out", str(out)]) == EXIT_OK
    report = read_json(out / "report.json")
    assert (report["mae"], report["ema"]) == (0.7, 60.0)
