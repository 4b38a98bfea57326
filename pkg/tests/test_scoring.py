from __future__ import annotations

import math

import numpy as np
import pytest

from gaitgauge.metrics import MetricVector
from gaitgauge.scoring import (
    CellScore,
    Leaf,
    ScoreTree,
    ScoreWeights,
    ScoringError,
    all_fail_score,
    combine_leaves,
    config_hash,
    grouped_reports,
    quality_score,
    score_cell,
    terrain_score,
)

DEFAULT_W = (2.0, 2.0, 1.0, 1.0, 1.0, 1.0)


def vec(*values) -> MetricVector:
    if len(values) == 1:
        values = values * 6
    return MetricVector(*values)


def test_quality_all_ones():
    assert quality_score(vec(1.0), DEFAULT_W) == pytest.approx(1.0, abs=1e-15)


def test_quality_annihilated_by_zero():
    assert quality_score(vec(0.0, 0.9, 0.9, 0.9, 0.9, 0.9), DEFAULT_W) == 0.0
    assert quality_score(vec(0.9, 0.9, 0.9, 0.9, 0.9, 0.0), DEFAULT_W) == 0.0


def test_quality_log_domain_hand_value():
    m = vec(0.9, 0.9, 0.8, 0.8, 0.8, 0.8)
    # Independent log-domain arithmetic for the weighted geometric mean.
    expected = math.exp((2 * math.log(0.9) + 2 * math.log(0.9) + 4 * math.log(0.8)) / 8.0)
    assert quality_score(m, DEFAULT_W) == pytest.approx(expected, abs=1e-12)
    # Same number as the plain product form.
    product = 0.9**2 * 0.9**2 * 0.8**4
    assert quality_score(m, DEFAULT_W) == pytest.approx(product ** (1.0 / 8.0), abs=1e-12)


def test_quality_bounds_and_monotonicity():
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(200):
        values = rng.uniform(0.05, 1.0, 6)
        q = quality_score(MetricVector(*values), DEFAULT_W)
        assert values.min() - 1e-12 <= q <= values.max() + 1e-12
        bumped = values.copy()
        i = rng.integers(0, 6)
        bumped[i] = min(1.0, bumped[i] + 0.1)
        assert quality_score(MetricVector(*bumped), DEFAULT_W) >= q - 1e-12


def test_quality_invariant_under_uniform_weight_scaling():
    rng = np.random.Generator(np.random.PCG64(1))
    for _ in range(50):
        values = MetricVector(*rng.uniform(0.1, 1.0, 6))
        a = quality_score(values, DEFAULT_W)
        b = quality_score(values, tuple(3.0 * w for w in DEFAULT_W))
        assert a == pytest.approx(b, abs=1e-12)


def test_quality_input_validation():
    with pytest.raises(ScoringError):
        quality_score(np.array([0.5, 0.5]), DEFAULT_W)
    with pytest.raises(ScoringError):
        quality_score(np.array([0.5] * 6), (1.0, 1.0, 1.0, 1.0, 1.0, -1.0))
    with pytest.raises(ScoringError):
        quality_score(np.array([1.5, 0.5, 0.5, 0.5, 0.5, 0.5]), DEFAULT_W)


def test_terrain_score_examples():
    assert terrain_score(1, 0.0) == pytest.approx(0.0, abs=1e-15)
    assert terrain_score(10, 1.0, alpha=0.09, beta=0.19) == pytest.approx(1.0, abs=1e-12)
    assert terrain_score(5, 0.8, alpha=0.09, beta=0.19) == pytest.approx(0.512, abs=1e-12)


def test_terrain_score_monotone_and_overlap():
    for level in range(1, 10):
        assert terrain_score(level + 1, 0.5) > terrain_score(level, 0.5)
        # alpha < beta: perfect quality at L beats zero quality at L+1.
        assert terrain_score(level, 1.0) > terrain_score(level + 1, 0.0)
    assert terrain_score(5, 0.9) > terrain_score(5, 0.1)


def test_terrain_score_validation():
    with pytest.raises(ScoringError):
        terrain_score(0, 0.5)
    with pytest.raises(ScoringError):
        terrain_score(11, 0.5)
    with pytest.raises(ScoringError):
        terrain_score(5, 1.2)


def test_all_fail_score():
    assert all_fail_score(0.6, beta=0.19) == pytest.approx(0.114, abs=1e-12)
    assert all_fail_score(0.0) == 0.0


def test_score_weights_validation():
    ScoreWeights()  # defaults are legal
    with pytest.raises(ScoringError):
        ScoreWeights(alpha=0.2, beta=0.1)
    with pytest.raises(ScoringError):
        ScoreWeights(alpha=0.09, beta=0.9)  # 9*0.09 + 0.9 > 1
    with pytest.raises(ScoringError):
        ScoreWeights(metric_exponents=(1.0,) * 5)
    with pytest.raises(ScoringError):
        ScoreWeights(metric_exponents=(0.0,) * 6)


def leaves_for(goals=("a", "b", "c"), seeds=(1, 2, 3), value=0.8):
    return [
        Leaf(goal=g, seed=s, metrics=vec(value), trial_metrics=[vec(value)] * 4)
        for g in goals
        for s in seeds
    ]


def make_tree(cell_values: dict[tuple[str, str], float], level: int = 10) -> ScoreTree:
    weights = ScoreWeights()
    cells = []
    for (terrain, dr_name), value in cell_values.items():
        leaves = leaves_for(value=value)
        score, quality, vectors = score_cell(level, leaves, weights, expected_seeds=3)
        cells.append(
            CellScore(
                terrain=terrain,
                dr_name=dr_name,
                dr={"friction": 1.0},
                level_star=level,
                quality=quality,
                metric_vectors=vectors,
                score=score,
                leaves=leaves,
            )
        )
    tree = ScoreTree(
        engine_version="0.1.0",
        config_hash="abc",
        weights=weights,
        normalization={},
        seeds={"root": 0},
        goal_mode="worst50",
        cells=cells,
    )
    tree.aggregate()
    return tree


def test_aggregate_constant_scores():
    cells = {(t, d): 0.8 for t in ("flat", "wave") for d in ("f1", "f2", "f3")}
    tree = make_tree(cells)
    expected = terrain_score(10, quality_score(vec(0.8)))
    for value in tree.terrain_scores.values():
        assert value == pytest.approx(expected, abs=1e-12)
    assert tree.final_score == pytest.approx(expected, abs=1e-12)


def test_aggregate_mean_over_terrains():
    # One terrain perfect, six at zero quality with level 1.
    weights = ScoreWeights()
    cells = []
    for i, terrain in enumerate(["t0", "t1", "t2", "t3", "t4", "t5", "t6"]):
        if i == 0:
            leaves = leaves_for(value=1.0)
            score, quality, vectors = score_cell(10, leaves, weights, expected_seeds=3)
            level = 10
        else:
            leaves = leaves_for(value=0.0)
            score, quality, vectors = score_cell(1, leaves, weights, expected_seeds=3)
            level = 1
        cells.append(
            CellScore(
                terrain=terrain,
                dr_name="nominal",
                dr={},
                level_star=level,
                quality=quality,
                metric_vectors=vectors,
                score=score,
                leaves=leaves,
            )
        )
    tree = ScoreTree(
        engine_version="0.1.0",
        config_hash="abc",
        weights=weights,
        normalization={},
        seeds={},
        goal_mode="worst50",
        cells=cells,
    )
    tree.aggregate()
    assert tree.terrain_scores["t0"] == pytest.approx(1.0, abs=1e-12)
    assert tree.final_score == pytest.approx(1.0 / 7.0, abs=1e-12)


def test_combine_leaves_seed_average_then_goal_aggregation():
    leaves = [
        Leaf(goal="g1", seed=1, metrics=vec(0.2), trial_metrics=[vec(0.2)]),
        Leaf(goal="g1", seed=2, metrics=vec(0.4), trial_metrics=[vec(0.4)]),
        Leaf(goal="g2", seed=1, metrics=vec(0.8), trial_metrics=[vec(0.8)]),
        Leaf(goal="g2", seed=2, metrics=vec(1.0), trial_metrics=[vec(1.0)]),
    ]
    worst = combine_leaves(leaves, goal_mode="worst50", expected_seeds=2)
    # seed means: g1 = 0.3, g2 = 0.9; worst50 of 2 goals = g1 only.
    assert worst.as_array() == pytest.approx(np.full(6, 0.3), abs=1e-12)
    mean = combine_leaves(leaves, goal_mode="mean", expected_seeds=2)
    assert mean.as_array() == pytest.approx(np.full(6, 0.6), abs=1e-12)


def test_combine_leaves_applies_mode_to_trials():
    trials = [vec(0.2), vec(0.4), vec(0.6), vec(0.8)]
    leaves = [Leaf(goal="g", seed=1, metrics=vec(0.3), trial_metrics=trials)]
    worst = combine_leaves(leaves, goal_mode="worst50", expected_seeds=1)
    assert worst.as_array() == pytest.approx(np.full(6, 0.3), abs=1e-12)
    top = combine_leaves(leaves, goal_mode="top25", expected_seeds=1)
    assert top.as_array() == pytest.approx(np.full(6, 0.8), abs=1e-12)


def test_tree_json_roundtrip_and_recompute_identical(tmp_path):
    cells = {
        (t, d): v
        for (t, d), v in zip(
            [(t, d) for t in ("flat", "wave", "obstacle") for d in ("f1", "f2")],
            [0.9, 0.7, 0.8, 0.6, 0.95, 0.5],
        )
    }
    tree = make_tree(cells)
    path = tmp_path / "tree.json"
    tree.save(path)
    loaded = ScoreTree.load(path)
    assert loaded.to_json() == tree.to_json()
    recomputed = loaded.recompute()
    assert recomputed.to_json() == tree.to_json()


def test_missing_cells_reported():
    tree = make_tree({("flat", "f1"): 0.8})
    tree.cells[0].error = "backend crash"
    errored = tree.errored_cells()
    assert len(errored) == 1 and errored[0].terrain == "flat"


def test_grouped_reports_stats():
    tree = make_tree({("flat", "f1"): 0.8, ("flat", "f2"): 0.8, ("wave", "f1"): 0.8, ("wave", "f2"): 0.8})
    report = grouped_reports(tree)
    for cat in ("tracking", "safety", "quality"):
        assert report.category_stds[cat] == pytest.approx(0.0, abs=1e-12)
        assert report.category_means[cat] == pytest.approx(0.8, abs=1e-12)
    assert report.mean_level == pytest.approx(10.0)
    assert report.metric_table["lin_tracking"]["mean"] == pytest.approx(0.8, abs=1e-12)
    assert report.final_score == pytest.approx(tree.final_score)


def test_grouped_category_mean_is_member_mean():
    weights = ScoreWeights()
    leaves = [
        Leaf(goal=g, seed=s, metrics=vec(0.6, 0.8, 0.5, 0.7, 0.9, 0.3), trial_metrics=[vec(0.6, 0.8, 0.5, 0.7, 0.9, 0.3)])
        for g in ("a", "b", "c")
        for s in (1, 2, 3)
    ]
    score, quality, vectors = score_cell(4, leaves, weights, expected_seeds=3)
    cell = CellScore(
        terrain="flat",
        dr_name="f1",
        dr={},
        level_star=4,
        quality=quality,
        metric_vectors=vectors,
        score=score,
        leaves=leaves,
    )
    tree = ScoreTree(
        engine_version="0.1.0",
        config_hash="x",
        weights=weights,
        normalization={},
        seeds={},
        goal_mode="worst50",
        cells=[cell],
    )
    tree.aggregate()
    report = grouped_reports(tree)
    assert report.category_means["tracking"] == pytest.approx((0.6 + 0.8) / 2, abs=1e-12)
    assert report.category_means["safety"] == pytest.approx((0.5 + 0.7) / 2, abs=1e-12)
    assert report.category_means["quality"] == pytest.approx((0.9 + 0.3) / 2, abs=1e-12)


def test_mean_level_definition():
    tree = make_tree({("flat", "f1"): 0.8, ("wave", "f1"): 0.8}, level=6)
    tree.cells[1].level_star = 8
    assert tree.mean_level() == pytest.approx(7.0)


def test_config_hash_stable_and_order_independent():
    a = config_hash({"b": 1, "a": [1, 2]})
    b = config_hash({"a": [1, 2], "b": 1})
    assert a == b
    assert a != config_hash({"a": [1, 2], "b": 2})
