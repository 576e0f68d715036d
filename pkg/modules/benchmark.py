#!/usr/bin/env python3
"""
Benchmark module for the video pointing toolkit

Runs fusion + evaluation over a set of clips for every point of an ablation
grid (strategy, k, tau, l and propagator noise). Clips are processed
concurrently in worker threads; results are gathered in clip order so the
aggregation never depends on scheduling.
"""

import asyncio
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.config import (
    DEFAULT_CONTEXT_LENGTH, DEFAULT_K, DEFAULT_SEED, DEFAULT_STRATEGY, DEFAULT_TAU, DEFAULT_WORKERS, STRATEGIES,
)
from core.errors import InvalidInputError
from modules.fusion import FusionConfig, KeyframeSet, Propagator, Strategy, fuse_clip
from modules.masks import MaskClip
from modules.metrics import EvalReport, ObjectScore, aggregate, object_scores
from modules.synth import NoiseSpec, SuiteConfig, exact_propagator, noisy_propagator
from modules.temporal import attn_check

logger = logging.getLogger("benchmark")

BENCHMARK_NOISE = NoiseSpec(jitter=0.1, dropout=0.15, spill=0.05)

# temporal-module shape checked once per context length of the grid
TEMPORAL_CHECK = {"heads": 2, "dim": 8, "windows": 4}

# ----------------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------------

class GridSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    strategy: List[str] = Field(default_factory=lambda: [DEFAULT_STRATEGY])
    k: List[int] = Field(default_factory=lambda: [DEFAULT_K])
    tau: List[float] = Field(default_factory=lambda: [DEFAULT_TAU])
    l: List[int] = Field(default_factory=lambda: [DEFAULT_CONTEXT_LENGTH])
    jitter: Optional[List[float]] = None
    dropout: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_values(self):
        for name in ("strategy", "k", "tau", "l"):
            if not getattr(self, name):
                raise ValueError(f"grid axis {name!r} is empty")
        unknown = [s for s in self.strategy if s not in STRATEGIES]
        if unknown:
            raise ValueError(f"unknown strategies {unknown}")
        if any(k < 1 for k in self.k) or any(l < 1 for l in self.l):
            raise ValueError("k and l values must be >= 1")
        if any(not 0.0 <= t <= 1.0 for t in self.tau):
            raise ValueError("tau values must lie in [0, 1]")
        return self


class BenchmarkConfig(BaseModel):
    """Sweep document: which clips, which propagator, which grid."""
    model_config = ConfigDict(extra="forbid")

    name: str = "benchmark"
    seed: int = Field(DEFAULT_SEED, ge=0)
    clips: Optional[str] = None
    suite: Optional[SuiteConfig] = None
    propagator: Literal["exact", "noisy"] = "noisy"
    noise: NoiseSpec = BENCHMARK_NOISE
    grid: GridSpec = GridSpec()

    @model_validator(mode="after")
    def _one_source(self):
        if (self.clips is None) == (self.suite is None):
            raise ValueError("give exactly one of 'clips' (a clip or suite directory) or 'suite'")
        return self


@dataclass(frozen=True)
class GridPoint:
    strategy: str
    k: int
    tau: float
    l: int
    jitter: float
    dropout: float

    def fusion(self) -> FusionConfig:
        return FusionConfig(k=self.k, tau=self.tau, strategy=Strategy(self.strategy))


def grid_points(grid: GridSpec, noise: NoiseSpec) -> List[GridPoint]:
    """Cartesian product in declaration order: strategy, k, tau, l, jitter, dropout."""
    jitters = grid.jitter if grid.jitter is not None else [noise.jitter]
    dropouts = grid.dropout if grid.dropout is not None else [noise.dropout]
    if not jitters or not dropouts:
        raise InvalidInputError("grid axes must not be empty")
    return [GridPoint(s, k, t, l, j, d)
            for s, k, t, l, j, d in itertools.product(grid.strategy, grid.k, grid.tau, grid.l, jitters, dropouts)]


# ----------------------------------------------------------------------------
# Per-clip work
# ----------------------------------------------------------------------------

NamedClip = Tuple[str, MaskClip]


def make_propagator(kind: str, gt: MaskClip, name: str, jitter: float, dropout: float,
                    seed: int, spill: float = 0.0) -> Propagator:
    """Noise is keyed by clip name, so a clip fused alone or inside a suite sees the same draws."""
    if kind == "exact":
        return exact_propagator(gt)
    if kind == "noisy":
        return noisy_propagator(gt, jitter, dropout, seed, stream=name, spill=spill)
    raise InvalidInputError(f"unknown propagator {kind!r}")


def fuse_and_score(clip: NamedClip, point: GridPoint, propagator: str, seed: int,
                   spill: float = 0.0) -> List[ObjectScore]:
    name, gt = clip
    prop = make_propagator(propagator, gt, name, point.jitter, point.dropout, seed, spill)
    pred = fuse_clip(KeyframeSet.from_clip(gt, point.k), prop, point.fusion())
    return object_scores(pred, gt, clip_name=name)


def temporal_check(context_length: int, seed: int) -> Dict[str, object]:
    """Loss and gradient check of the temporal module with an l-frame context."""
    report = attn_check(seed=seed, context_length=context_length, **TEMPORAL_CHECK)
    return {"context_length": context_length, "loss": report.loss,
            "max_rel_error": report.grad.max_error, "passed": report.passed}


# ----------------------------------------------------------------------------
# Async runner
# ----------------------------------------------------------------------------

@dataclass
class SweepResult:
    reports: List[EvalReport] = field(default_factory=list)

    def summary(self) -> List[Dict[str, object]]:
        """Grid points ranked by J&F (descending); ties keep grid order."""
        order = sorted(range(len(self.reports)), key=lambda i: -self.reports[i].jf)
        rows = []
        for rank, i in enumerate(order, 1):
            r = self.reports[i]
            rows.append({
                "rank": rank, "strategy": r.strategy, "k": r.k, "tau": r.tau, "l": r.l,
                "attn_loss": (r.temporal or {}).get("loss"),
                "jitter": r.config.get("jitter"), "dropout": r.config.get("dropout"),
                "j": r.j, "f": r.f, "jf": r.jf,
            })
        return rows

    def to_dict(self) -> Dict[str, object]:
        return {"reports": [r.to_dict() for r in self.reports], "summary": self.summary()}


async def evaluate_point(clips: Sequence[NamedClip], point: GridPoint, propagator: str, seed: int,
                         dataset: str, workers: int = DEFAULT_WORKERS, spill: float = 0.0,
                         temporal: Optional[Dict[str, object]] = None) -> EvalReport:
    if not clips:
        raise InvalidInputError("no clips to evaluate")
    sem = asyncio.Semaphore(max(1, workers))

    async def one(clip: NamedClip) -> List[ObjectScore]:
        async with sem:
            return await asyncio.to_thread(fuse_and_score, clip, point, propagator, seed, spill)

    per_clip = await asyncio.gather(*(one(c) for c in clips))
    objects = [o for scores in per_clip for o in scores]
    report = EvalReport(
        dataset=dataset, strategy=point.strategy, tau=point.tau, k=point.k, l=point.l,
        config={"propagator": propagator, "jitter": point.jitter, "dropout": point.dropout,
                "spill": spill, "seed": seed, "clips": len(clips)},
        temporal=temporal,
        objects=objects,
    )
    report.with_segmentation(aggregate(objects))
    logger.info("Точка сетки %s k=%d tau=%.2f: J&F=%.4f", point.strategy, point.k, point.tau, report.jf)
    return report


async def run_sweep(clips: Sequence[NamedClip], points: Sequence[GridPoint], propagator: str, seed: int,
                    dataset: str, workers: int = DEFAULT_WORKERS, spill: float = 0.0) -> SweepResult:
    if not points:
        raise InvalidInputError("empty grid")
    result = SweepResult()
    checks = {l: await asyncio.to_thread(temporal_check, l, seed) for l in dict.fromkeys(p.l for p in points)}
    for point in points:
        result.reports.append(await evaluate_point(clips, point, propagator, seed, dataset, workers, spill,
                                                   temporal=checks[point.l]))
    return result


def sweep(clips: Sequence[NamedClip], points: Sequence[GridPoint], propagator: str, seed: int,
          dataset: str = "benchmark", workers: int = DEFAULT_WORKERS, spill: float = 0.0) -> SweepResult:
    """Blocking wrapper around run_sweep."""
    return asyncio.run(run_sweep(clips, points, propagator, seed, dataset, workers, spill))
