"""Hierarchical scoring: execution quality Q, overlapping terrain score S,
per-terrain robust score, and the final framework score.

Q is the weighted geometric mean of the six metrics, so one failed dimension
annihilates the score.  S = alpha * (L* - 1) + beta * Q blends the highest
passed level with quality at that level; with beta > alpha, perfect quality
one level down overlaps mediocre quality one level up, and with the default
alpha = 0.09, beta = 0.19 the final score is bounded in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import AGGREGATION_MODES, METRIC_NAMES, MetricVector, aggregate_goal_scores, average_over_seeds

METRIC_CATEGORIES = {
    "tracking": ("lin_tracking", "ang_tracking"),
    "safety": ("dof_power", "dof_limits"),
    "quality": ("orientation", "smoothness"),
}


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreWeights:
    """Exponents of the geometric mean plus the level/quality blend."""

    metric_exponents: tuple[float, ...] = (2.0, 2.0, 1.0, 1.0, 1.0, 1.0)
    alpha: float = 0.09
    beta: float = 0.19
    levels: int = 10

    def __post_init__(self) -> None:
        if len(self.metric_exponents) != len(METRIC_NAMES):
            raise ScoringError("need one exponent per metric")
        if any(w <= 0 for w in self.metric_exponents):
            raise ScoringError("metric exponents must be positive")
        if self.alpha <= 0 or self.beta <= 0:
            raise ScoringError("alpha and beta must be positive")
        if self.beta <= self.alpha:
            raise ScoringError("beta must exceed alpha for score overlap")
        if self.alpha * (self.levels - 1) + self.beta > 1.0 + 1e-12:
            raise ScoringError("alpha * (levels - 1) + beta must not exceed 1")

    def to_dict(self) -> dict:
        return {
            "metric_exponents": list(self.metric_exponents),
            "alpha": self.alpha,
            "beta": self.beta,
            "levels": self.levels,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ScoreWeights":
        return ScoreWeights(
            metric_exponents=tuple(doc["metric_exponents"]),
            alpha=doc["alpha"],
            beta=doc["beta"],
            levels=doc.get("levels", 10),
        )


def quality_score(metrics: MetricVector | np.ndarray, exponents: tuple[float, ...] | None = None) -> float:
    """Weighted geometric mean (prod m_k^w_k)^(1/sum w_k), log-domain.

    Any zero metric yields exactly zero.
    """
    m = metrics.as_array() if isinstance(metrics, MetricVector) else np.asarray(metrics, dtype=np.float64)
    w = np.asarray(exponents if exponents is not None else ScoreWeights().metric_exponents, dtype=np.float64)
    if m.shape != w.shape:
        raise ScoringError(f"got {m.size} metrics for {w.size} exponents")
    if np.any(m < 0) or np.any(m > 1):
        raise ScoringError("metrics must lie in [0, 1]")
    if np.any(w <= 0):
        raise ScoringError("exponents must be positive")
    if np.any(m == 0):
        return 0.0
    return float(math.exp(np.dot(w, np.log(m)) / np.sum(w)))


def terrain_score(level_star: int, quality: float, alpha: float = 0.09, beta: float = 0.19) -> float:
    """Overlapping score S = alpha * (L* - 1) + beta * Q for a passed level."""
    if not 1 <= level_star <= 10:
        raise ScoringError(f"level_star must be in 1..10, got {level_star}")
    if not 0.0 <= quality <= 1.0:
        raise ScoringError(f"quality must be in [0, 1], got {quality}")
    return alpha * (level_star - 1) + beta * quality


def all_fail_score(quality_at_level_one: float, beta: float = 0.19) -> float:
    """Score when no level passes: L* is recorded as 0 and only the quality
    measured at level 1 contributes."""
    if not 0.0 <= quality_at_level_one <= 1.0:
        raise ScoringError("quality must be in [0, 1]")
    return beta * quality_at_level_one


@dataclass
class Leaf:
    """Aggregated metrics of one (terrain, DR, level, goal, seed) episode."""

    goal: str
    seed: int
    metrics: MetricVector
    trial_metrics: list[MetricVector] = field(default_factory=list)
    fell: bool = False

    def to_dict(self) -> dict:
        return {
            "goal": self.goal,
            "seed": self.seed,
            "metrics": self.metrics.to_dict(),
            "trials": [t.to_dict() for t in self.trial_metrics],
            "fell": self.fell,
        }

    @staticmethod
    def from_dict(doc: dict) -> "Leaf":
        return Leaf(
            goal=doc["goal"],
            seed=doc["seed"],
            metrics=MetricVector(**doc["metrics"]),
            trial_metrics=[MetricVector(**t) for t in doc.get("trials", [])],
            fell=doc.get("fell", False),
        )


def combine_leaves(
    leaves: list[Leaf],
    goal_mode: str = "worst50",
    expected_seeds: int | None = None,
) -> MetricVector:
    """Aggregate trials within each leaf, seed-average each goal, then
    aggregate across goals; the mode applies at both aggregation stages."""
    if not leaves:
        raise ScoringError("no leaves to combine")
    by_goal: dict[str, list[MetricVector]] = {}
    for leaf in leaves:
        if leaf.trial_metrics:
            vec = aggregate_goal_scores(leaf.trial_metrics, mode=goal_mode)
        else:
            vec = leaf.metrics
        by_goal.setdefault(leaf.goal, []).append(vec)
    per_goal = []
    for goal in sorted(by_goal):
        vectors = by_goal[goal]
        count = expected_seeds if expected_seeds is not None else len(vectors)
        per_goal.append(average_over_seeds(vectors, expected_count=count))
    return aggregate_goal_scores(per_goal, mode=goal_mode)


@dataclass
class CellScore:
    """Scored node for one (terrain, domain randomization) pair."""

    terrain: str
    dr_name: str
    dr: dict
    level_star: int
    quality: dict[str, float]
    metric_vectors: dict[str, MetricVector]
    score: float
    leaves: list[Leaf] = field(default_factory=list)
    search_trace: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "terrain": self.terrain,
            "dr_name": self.dr_name,
            "dr": self.dr,
            "level_star": self.level_star,
            "quality": self.quality,
            "metrics": {mode: mv.to_dict() for mode, mv in self.metric_vectors.items()},
            "score": self.score,
            "leaves": [leaf.to_dict() for leaf in self.leaves],
            "search": self.search_trace,
            "error": self.error,
        }

    @staticmethod
    def from_dict(doc: dict) -> "CellScore":
        return CellScore(
            terrain=doc["terrain"],
            dr_name=doc["dr_name"],
            dr=doc["dr"],
            level_star=doc["level_star"],
            quality=doc["quality"],
            metric_vectors={mode: MetricVector(**mv) for mode, mv in doc["metrics"].items()},
            score=doc["score"],
            leaves=[Leaf.from_dict(d) for d in doc.get("leaves", [])],
            search_trace=doc.get("search", {}),
            error=doc.get("error"),
        )


def score_cell(
    level_star: int,
    leaves: list[Leaf],
    weights: ScoreWeights,
    goal_mode: str = "worst50",
    expected_seeds: int | None = None,
) -> tuple[float, dict[str, float], dict[str, MetricVector]]:
    """Quality per aggregation mode plus the cell score from the default mode."""
    vectors = {
        mode: combine_leaves(leaves, goal_mode=mode, expected_seeds=expected_seeds)
        for mode in AGGREGATION_MODES
    }
    quality = {mode: quality_score(v, weights.metric_exponents) for mode, v in vectors.items()}
    q = quality[goal_mode]
    if level_star >= 1:
        score = terrain_score(level_star, q, weights.alpha, weights.beta)
    else:
        score = all_fail_score(q, weights.beta)
    return score, quality, vectors


@dataclass
class ScoreTree:
    """Full scored hierarchy with provenance; everything above the leaves is
    recomputable from them."""

    engine_version: str
    config_hash: str
    weights: ScoreWeights
    normalization: dict
    seeds: dict
    goal_mode: str
    cells: list[CellScore]
    terrain_scores: dict[str, float] = field(default_factory=dict)
    final_score: float = 0.0

    def aggregate(self) -> None:
        """Arithmetic means: S-bar_i over DRs, then the final mean over terrains."""
        by_terrain: dict[str, list[float]] = {}
        for cell in self.cells:
            by_terrain.setdefault(cell.terrain, []).append(cell.score)
        missing = [t for t, scores in by_terrain.items() if not scores]
        if missing:
            raise ScoringError(f"terrains with no scored cells: {missing}")
        self.terrain_scores = {t: float(np.mean(v)) for t, v in sorted(by_terrain.items())}
        self.final_score = float(np.mean(list(self.terrain_scores.values())))

    def errored_cells(self) -> list[CellScore]:
        return [c for c in self.cells if c.error]

    def mean_level(self) -> float:
        return float(np.mean([c.level_star for c in self.cells])) if self.cells else 0.0

    def to_dict(self) -> dict:
        return {
            "engine_version": self.engine_version,
            "config_hash": self.config_hash,
            "weights": self.weights.to_dict(),
            "normalization": self.normalization,
            "seeds": self.seeds,
            "goal_mode": self.goal_mode,
            "cells": [c.to_dict() for c in self.cells],
            "terrain_scores": self.terrain_scores,
            "final_score": self.final_score,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def from_dict(doc: dict) -> "ScoreTree":
        tree = ScoreTree(
            engine_version=doc["engine_version"],
            config_hash=doc["config_hash"],
            weights=ScoreWeights.from_dict(doc["weights"]),
            normalization=doc["normalization"],
            seeds=doc["seeds"],
            goal_mode=doc["goal_mode"],
            cells=[CellScore.from_dict(c) for c in doc["cells"]],
        )
        tree.terrain_scores = doc["terrain_scores"]
        tree.final_score = doc["final_score"]
        return tree

    @staticmethod
    def load(path: str | Path) -> "ScoreTree":
        return ScoreTree.from_dict(json.loads(Path(path).read_text()))

    def recompute(self) -> "ScoreTree":
        """Rebuild every internal value from the persisted leaves."""
        cells = []
        for cell in self.cells:
            if cell.error or not cell.leaves:
                cells.append(cell)
                continue
            score, quality, vectors = score_cell(
                cell.level_star, cell.leaves, self.weights, goal_mode=self.goal_mode
            )
            cells.append(
                CellScore(
                    terrain=cell.terrain,
                    dr_name=cell.dr_name,
                    dr=cell.dr,
                    level_star=cell.level_star,
                    quality=quality,
                    metric_vectors=vectors,
                    score=score,
                    leaves=cell.leaves,
                    search_trace=cell.search_trace,
                )
            )
        rebuilt = ScoreTree(
            engine_version=self.engine_version,
            config_hash=self.config_hash,
            weights=self.weights,
            normalization=self.normalization,
            seeds=self.seeds,
            goal_mode=self.goal_mode,
            cells=cells,
        )
        rebuilt.aggregate()
        return rebuilt


@dataclass(frozen=True)
class GroupedReport:
    final_score: float
    category_means: dict[str, float]
    category_stds: dict[str, float]
    metric_table: dict[str, dict[str, float]]
    mean_level: float
    terrain_scores: dict[str, float]


def grouped_reports(tree: ScoreTree) -> GroupedReport:
    """Category summaries mirroring the standard results layout:
    tracking = velocity metrics, safety = power + limits,
    quality = orientation + smoothness, plus the mean passed level."""
    scored = [c for c in tree.cells if not c.error]
    if not scored:
        return GroupedReport(tree.final_score, {}, {}, {}, 0.0, dict(tree.terrain_scores))
    default_vectors = np.stack([c.metric_vectors[tree.goal_mode].as_array() for c in scored])
    cat_means, cat_stds = {}, {}
    for cat, members in METRIC_CATEGORIES.items():
        idx = [METRIC_NAMES.index(m) for m in members]
        per_cell = default_vectors[:, idx].mean(axis=1)
        cat_means[cat] = float(per_cell.mean())
        cat_stds[cat] = float(per_cell.std())
    metric_table: dict[str, dict[str, float]] = {}
    for mode in AGGREGATION_MODES:
        stacked = np.stack([c.metric_vectors[mode].as_array() for c in scored])
        for i, name in enumerate(METRIC_NAMES):
            metric_table.setdefault(name, {})[mode] = float(stacked[:, i].mean())
    return GroupedReport(
        final_score=tree.final_score,
        category_means=cat_means,
        category_stds=cat_stds,
        metric_table=metric_table,
        mean_level=float(np.mean([c.level_star for c in scored])),
        terrain_scores=dict(tree.terrain_scores),
    )


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
