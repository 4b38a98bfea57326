"""Acceptance gate: every exit criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -s`` to see one pass/fail line per
criterion.  Tolerances and runtime budgets are pinned here, not calibrated
elsewhere.
"""

from __future__ import annotations

import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from gaitgauge.goals import (
    CommandLimits,
    dynamic_sigma,
    exclusion_speed,
    sample_training_command,
    sigma_max_for,
)
from gaitgauge.metrics import MetricVector, aggregate_goal_scores, compute_metrics
from gaitgauge.pipelines import (
    TERRAIN_SET,
    EngineConfig,
    PolicySpec,
    default_dr_presets,
    level_pipeline,
    linear_scan_level,
    multi_pipeline,
    pass_seeds_for,
    stress_pipeline,
)
from gaitgauge.policy import Mlp, MoEPolicy, load_balance_diagnostic
from gaitgauge.rewards import REWARD_TERMS, compute_step_rewards, hip_symmetry, multi_terrain_config
from gaitgauge.robot import HIP_INDICES, NUM_JOINTS, default_description
from gaitgauge.scoring import (
    CellScore,
    Leaf,
    ScoreTree,
    ScoreWeights,
    all_fail_score,
    quality_score,
    score_cell,
    terrain_score,
)
from gaitgauge.sim import CapabilityProfile, ReferenceSimConfig
from gaitgauge.goals import CommandTriple
from gaitgauge import terrain as terrainmod

from helpers import random_state, synthetic_trace

TROT = PolicySpec(kind="scripted", name="trot_tracker")
DIFFICULTIES = [level / 10 for level in range(1, 11)]


@contextmanager
def criterion(name: str):
    start = time.time()
    try:
        yield
    except Exception:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name} ({time.time() - start:.1f}s)")


# -- 1. score math exactness ---------------------------------------------------


def test_c1_score_math_exactness():
    with criterion("score math exactness (1e-12, max=1, min=0)"):
        start = time.time()
        w = (2.0, 2.0, 1.0, 1.0, 1.0, 1.0)

        assert abs(quality_score(MetricVector(*(1.0,) * 6), w) - 1.0) < 1e-12
        assert quality_score(MetricVector(0.0, 1.0, 1.0, 1.0, 1.0, 1.0), w) == 0.0
        m = MetricVector(0.9, 0.9, 0.8, 0.8, 0.8, 0.8)
        hand = math.exp((2 * math.log(0.9) + 2 * math.log(0.9) + 4 * math.log(0.8)) / 8.0)
        assert abs(quality_score(m, w) - hand) < 1e-12

        assert abs(terrain_score(1, 0.0, 0.09, 0.19) - 0.0) < 1e-12
        assert abs(terrain_score(10, 1.0, 0.09, 0.19) - 1.0) < 1e-12
        assert abs(terrain_score(5, 0.8, 0.09, 0.19) - 0.512) < 1e-12

        # Maximum attainable final score through the full aggregation: perfect
        # leaves at level 10 everywhere; minimum: all-fail sentinel at zero
        # quality.
        weights = ScoreWeights(alpha=0.09, beta=0.19)

        def tree_with(leaf_value: float, level: int) -> ScoreTree:
            cells = []
            for name, _ in TERRAIN_SET:
                for dr_name, dr in default_dr_presets():
                    leaves = [
                        Leaf(goal=g, seed=s, metrics=MetricVector(*(leaf_value,) * 6),
                             trial_metrics=[MetricVector(*(leaf_value,) * 6)] * 2)
                        for g in ("max_velocity", "diagonal_velocity", "target_position")
                        for s in (1, 2, 3)
                    ]
                    score, quality, vectors = score_cell(level, leaves, weights, expected_seeds=3)
                    cells.append(
                        CellScore(terrain=name, dr_name=dr_name, dr=dr.to_dict(), level_star=level,
                                  quality=quality, metric_vectors=vectors, score=score, leaves=leaves)
                    )
            tree = ScoreTree(engine_version="t", config_hash="t", weights=weights, normalization={},
                             seeds={}, goal_mode="worst50", cells=cells)
            tree.aggregate()
            return tree

        best = tree_with(1.0, 10)
        assert abs(best.final_score - 1.0) < 1e-12
        worst_cells = tree_with(0.0, 0)
        assert abs(worst_cells.final_score - 0.0) < 1e-12
        assert all_fail_score(0.0, beta=0.19) == 0.0

        mean_check = tree_with(0.8, 10)
        per_cell = terrain_score(10, quality_score(MetricVector(*(0.8,) * 6), w), 0.09, 0.19)
        assert abs(mean_check.final_score - per_cell) < 1e-12

        assert time.time() - start < 1.0


# -- 2. terrain formula conformance ---------------------------------------------


def test_c2_terrain_formula_conformance():
    with criterion("terrain formulas exact over d = 0.1..1.0"):
        start = time.time()
        for d in DIFFICULTIES:
            amp = terrainmod.wave_amplitude(d)
            assert abs(amp - 0.4 * d) < 1e-15
            assert 0.04 - 1e-12 <= amp <= 0.4 + 1e-12

            k = terrainmod.slope_gradient(d)
            assert abs(k - (0.07 + 0.5 * d)) < 1e-15

            h = terrainmod.stair_height(d)
            assert 0.08 - 1e-12 <= h <= 0.23 + 1e-12
            if d <= 0.4:
                assert abs(h - (0.05 + 0.3 * d)) < 1e-15
            else:
                assert abs(h - (0.17 + 0.1 * (d - 0.4))) < 1e-15

            ob = terrainmod.obstacle_height(d)
            assert abs(ob - (0.05 + 0.23 * d)) < 1e-15
            assert 0.073 - 1e-12 <= ob <= 0.28 + 1e-12

        assert abs(terrainmod.stair_height(0.4) - 0.17) < 1e-15
        assert abs(terrainmod.stair_height(0.5) - 0.18) < 1e-15

        # Generated fields realize the same parameters.
        hf = terrainmod.generate(terrainmod.TerrainSpec(kind="wave", difficulty=1.0))
        assert abs(hf.grid[0, 0] - 0.4) < 1e-12
        hf = terrainmod.generate(terrainmod.TerrainSpec(kind="obstacle", difficulty=1.0, seed=1))
        assert abs(float(hf.grid.max()) - 0.28) < 1e-12
        assert time.time() - start < 1.0


# -- 3. level-search oracle equivalence -----------------------------------------


# Short episodes for the search experiment: falls trigger quickly and the
# waypoint/displacement threshold come down together, so each probe still
# exercises the full pass predicate.
_FAST_SEARCH_KWARGS = dict(success_threshold_m=2.0, target_offset_x=2.8, target_timeout_s=10.0)


def _fast_engine(cap, boundary=None) -> EngineConfig:
    ref = ReferenceSimConfig(
        capability=CapabilityProfile(max_level=cap, boundary_pass_seeds=boundary),
        fall_window=(0.3, 0.6),
    )
    return EngineConfig(ref=ref, **_FAST_SEARCH_KWARGS)


def _profile_job(args):
    index, kinds_row, cap, boundary_fraction = args
    name, kind = kinds_row
    root = 1000 + index
    seeds = pass_seeds_for(root, name, "dr", 5)
    boundary = None
    if boundary_fraction is not None:
        boundary = frozenset(seeds[: int(round(boundary_fraction * 5))])
    engine = _fast_engine(cap, boundary)
    from gaitgauge.sim import nominal_dr

    searched = level_pipeline(
        name, kind, nominal_dr(), TROT, engine, root_seed=root, dr_name="dr", compute_quality=False
    )
    scanned = linear_scan_level(name, kind, nominal_dr(), TROT, engine, root_seed=root, dr_name="dr")
    return searched.level_star, scanned, searched.error


def test_c3_level_search_oracle_equivalence():
    with criterion("level search == exhaustive scan on 200 profiles; 3-of-5 boundary fails"):
        start = time.time()
        rng = np.random.Generator(np.random.PCG64(2024))
        jobs = []
        for i in range(200):
            kinds_row = TERRAIN_SET[i % len(TERRAIN_SET)] if i % 4 == 0 else ("flat", "flat")
            cap = int(rng.integers(0, 11))
            boundary_fraction = None
            if cap >= 1 and rng.random() < 0.25:
                boundary_fraction = float(rng.choice([0.2, 0.4, 0.6, 0.8, 1.0]))
            jobs.append((i, kinds_row, cap, boundary_fraction))

        workers = min(8, os.cpu_count() or 1)
        results = multi_pipeline(jobs, _profile_job, workers=workers)
        mismatches = 0
        for (index, row, cap, boundary_fraction), result in zip(jobs, results):
            assert not isinstance(result, Exception), result
            level_star, scanned, error = result
            assert error is None, error
            assert level_star == scanned, (index, row, cap, boundary_fraction, level_star, scanned)
            # Expected value from the profile itself: the cap if the boundary
            # clears 80%, one below otherwise.
            if boundary_fraction is None or boundary_fraction >= 0.8:
                expected = cap
            else:
                expected = cap - 1
            assert level_star == expected, (index, cap, boundary_fraction, level_star)
            mismatches += level_star != scanned
        assert mismatches == 0

        # Explicit 3-of-5 boundary cases always fail the 80% rule.
        for root in (7001, 7002, 7003):
            seeds = pass_seeds_for(root, "wave", "dr", 5)
            engine = _fast_engine(6, frozenset(seeds[:3]))
            from gaitgauge.sim import nominal_dr

            result = level_pipeline(
                "wave", "wave", nominal_dr(), TROT, engine, root_seed=root, dr_name="dr", compute_quality=False
            )
            assert result.search_trace.get("6") == pytest.approx(0.6)
            assert result.level_star == 5

        elapsed = time.time() - start
        assert elapsed < 120.0, f"oracle equivalence took {elapsed:.0f}s (budget 120s)"


# -- 4. stress determinism -------------------------------------------------------


def test_c4_stress_determinism_across_workers():
    with criterion("full stress byte-identical for 1 vs 8 workers"):
        start = time.time()
        engine = EngineConfig()
        tree1, _ = stress_pipeline(TROT, engine, root_seed=2024, workers=1)
        tree8, _ = stress_pipeline(TROT, engine, root_seed=2024, workers=8)
        assert len(tree1.cells) == 63
        assert not tree1.errored_cells()
        json1 = tree1.to_json()
        json8 = tree8.to_json()
        assert json1 == json8
        assert json1.encode("utf-8") == json8.encode("utf-8")
        elapsed = time.time() - start
        assert elapsed < 300.0, f"stress determinism took {elapsed:.0f}s (budget 300s)"


# -- 5. metric properties ---------------------------------------------------------


def test_c5_metric_properties():
    with criterion("metric monotonicity, aggregation ordering, intrinsic [0,1] metrics"):
        knobs = {
            "lin_tracking": "lin_shortfall",
            "ang_tracking": "ang_error",
            "dof_power": "power_per_joint",
            "orientation": "gravity_y",
            "smoothness": "tau_step",
        }
        scales = np.linspace(0.0, 1.0, 9)
        for metric, knob in knobs.items():
            values = [getattr(compute_metrics(synthetic_trace(**{knob: s})), metric) for s in scales]
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:])), metric
        fractions = [
            compute_metrics(synthetic_trace(outside_fraction=f)).dof_limits
            for f in np.linspace(0, 1, 13)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(fractions, fractions[1:]))

        rng = np.random.Generator(np.random.PCG64(5))
        for _ in range(1000):
            vectors = [MetricVector(*rng.uniform(0, 1, 6)) for _ in range(int(rng.integers(1, 10)))]
            worst = aggregate_goal_scores(vectors, "worst50").as_array()
            mean = aggregate_goal_scores(vectors, "mean").as_array()
            top = aggregate_goal_scores(vectors, "top25").as_array()
            assert np.all(worst <= mean + 1e-12)
            assert np.all(mean <= top + 1e-12)

        # dof-limits and orientation are dimensionless: no scale constant in play.
        for fraction in (0.0, 0.25, 0.5, 1.0):
            m = compute_metrics(synthetic_trace(outside_fraction=fraction))
            assert 0.0 <= m.dof_limits <= 1.0
        for g in (0.0, 0.3, 0.7, 1.0):
            m = compute_metrics(synthetic_trace(gravity_y=g))
            assert 0.0 <= m.orientation <= 1.0


# -- 6. MoE correctness ------------------------------------------------------------


def test_c6_moe_correctness():
    with criterion("gate simplex x10000, K=1 degeneracy, K=2 hand check, load balance"):
        policy = MoEPolicy.random(seed=11, num_experts=4, history=2, obs_dim=8, hidden=(32,), latent_dim=6)
        rng = np.random.Generator(np.random.PCG64(12))
        for _ in range(10000):
            _, _, gate = policy.forward(rng.normal(size=16))
            assert np.all(gate >= -1e-12)
            assert abs(float(np.sum(gate)) - 1.0) < 1e-9

        # K = 1 mixture degenerates to the single expert.
        expert = Mlp(layers=[(np.array([[1.5], [-0.5]]), np.array([0.1]))])
        single = MoEPolicy(
            experts=[expert],
            gate=Mlp(layers=[(np.zeros((2, 1)), np.zeros(1))]),
            head=Mlp(layers=[(np.ones((3, 1)), np.zeros(1))]),
            history=1,
            obs_dim=2,
        )
        obs = np.array([0.7, -0.3])
        _, latent, gate = single.forward(obs)
        assert gate == pytest.approx([1.0], abs=1e-15)
        assert latent == pytest.approx(expert(obs), abs=1e-15)

        # K = 2 hand-weighted mixture to 1e-9.
        e1 = Mlp(layers=[(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))])
        e2 = Mlp(layers=[(np.array([[2.0, 0.0], [0.0, -1.0]]), np.array([0.5, 0.0]))])
        two = MoEPolicy(
            experts=[e1, e2],
            gate=Mlp(layers=[(np.zeros((2, 2)), np.array([math.log(3.0), 0.0]))]),
            head=Mlp(layers=[(np.ones((4, 1)), np.zeros(1))]),
            history=1,
            obs_dim=2,
        )
        x = np.array([0.2, -0.4])
        _, latent, gate = two.forward(x)
        assert abs(gate[0] - 0.75) < 1e-9 and abs(gate[1] - 0.25) < 1e-9
        expected = (0.75 * 0.2 + 0.25 * (2 * 0.2 + 0.5), 0.75 * -0.4 + 0.25 * 0.4)
        assert abs(latent[0] - expected[0]) < 1e-9
        assert abs(latent[1] - expected[1]) < 1e-9

        # Load balance: zero iff column means are uniform; one-hot K=4 gives 0.75.
        assert load_balance_diagnostic(np.full((64, 4), 0.25)) == 0.0
        balanced_mix = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        assert load_balance_diagnostic(balanced_mix) == pytest.approx(0.0, abs=1e-15)
        one_hot = np.zeros((16, 4))
        one_hot[:, 0] = 1.0
        assert abs(load_balance_diagnostic(one_hot) - 0.75) < 1e-12
        rng = np.random.Generator(np.random.PCG64(13))
        for _ in range(200):
            raw = rng.uniform(0.05, 1.0, (12, 4))
            rows = raw / raw.sum(axis=1, keepdims=True)
            value = load_balance_diagnostic(rows)
            uniform = np.allclose(rows.mean(axis=0), 0.25, atol=1e-12)
            assert (value < 1e-20) == uniform


# -- 7. reward replay ---------------------------------------------------------------


def test_c7_reward_replay_against_scalar_oracle():
    with criterion("reward terms match scalar recomputation on 100 steps; r_hs symmetry"):
        rng = np.random.Generator(np.random.PCG64(21))
        cfg = multi_terrain_config()
        robot = default_description()
        dt = 0.02
        for _ in range(100):
            state = random_state(rng)
            cmd = CommandTriple(*rng.uniform(-1.5, 1.5, 3))
            action = rng.uniform(-0.5, 0.5, NUM_JOINTS)
            prev = rng.uniform(-0.5, 0.5, NUM_JOINTS)
            prev2 = rng.uniform(-0.5, 0.5, NUM_JOINTS)
            prev_dq = rng.uniform(-4, 4, NUM_JOINTS)
            support = rng.uniform(-0.2, 0.2)
            collisions = int(rng.integers(0, 3))
            out = compute_step_rewards(
                state, cmd, action, prev, prev2, prev_dq, cfg, robot,
                dt=dt, support_height=support, collisions=collisions,
            )
            v = state.body_lin_vel()
            oracle = {
                "lin_tracking": math.exp(-cfg.sigma * ((cmd.vx - v[0]) ** 2 + (cmd.vy - v[1]) ** 2)),
                "ang_tracking": math.exp(-cfg.sigma * (cmd.wz - state.ang_vel[2]) ** 2),
                "lin_vel_z": state.lin_vel[2] ** 2,
                "ang_vel_xy": state.ang_vel[0] ** 2 + state.ang_vel[1] ** 2,
                "joint_acc": sum(((state.dq[i] - prev_dq[i]) / dt) ** 2 for i in range(NUM_JOINTS)),
                "joint_power": sum(abs(state.tau[i]) * abs(state.dq[i]) for i in range(NUM_JOINTS)),
                "joint_torque": sum(state.tau[i] ** 2 for i in range(NUM_JOINTS)),
                "base_height": (cfg.desired_base_height - (state.base_pos[2] - support)) ** 2,
                "action_rate": sum((action[i] - prev[i]) ** 2 for i in range(NUM_JOINTS)),
                "action_smoothness": sum((action[i] - 2 * prev[i] + prev2[i]) ** 2 for i in range(NUM_JOINTS)),
                "collision": float(collisions),
                "joint_limit": float(
                    sum(1 for i in range(NUM_JOINTS)
                        if state.q[i] < robot.soft_lower[i] or state.q[i] > robot.soft_upper[i])
                ),
                "foot_regulation": 0.0,
                "hip_regulation": sum(
                    abs(state.q[i] - d) for i, d in zip(HIP_INDICES, cfg.default_hip_pose)
                ),
            }
            lin_norm = math.hypot(cmd.vx, cmd.vy)
            oracle["hip_symmetry"] = 0.0 if lin_norm == 0 else (
                abs(cmd.vx) / lin_norm
                * (abs(state.q[0] + state.q[3]) + abs(state.q[6] + state.q[9]))
            )
            for name in REWARD_TERMS:
                assert abs(out.terms[name] - oracle[name]) <= 1e-9 * max(1.0, abs(oracle[name])), name
            total = sum(cfg.weight(name) * oracle[name] for name in REWARD_TERMS)
            assert abs(out.total - total) <= 1e-9 * max(1.0, abs(total))

        # Antisymmetric hip poses zero the symmetry term, 1000 random draws.
        for _ in range(1000):
            q = rng.uniform(-1, 1, NUM_JOINTS)
            q[3] = -q[0]
            q[9] = -q[6]
            cmd = CommandTriple(rng.uniform(0.1, 2.0), rng.uniform(-1, 1), 0.0)
            assert abs(hip_symmetry(q, cmd)) < 1e-12


# -- 8. command sampling statistics --------------------------------------------------


def test_c8_command_sampling_statistics():
    with criterion("100k samples: stationary 0.10±0.01, extreme 0.20±0.015, band respected"):
        rng = np.random.Generator(np.random.PCG64(31))
        limits = CommandLimits(0.5, 0.5, 1.0)
        n = 100_000
        v_star = exclusion_speed([], 5.0, 20.0, limits)
        assert v_star == pytest.approx(0.25)
        stationary = extreme = 0
        for _ in range(n):
            s = sample_training_command(rng, limits)
            if s.stationary:
                stationary += 1
                assert s.command.vx == 0.0 and s.command.vy == 0.0
            elif s.extreme:
                extreme += 1
            else:
                assert abs(s.command.vx) >= v_star - 1e-12
                assert abs(s.command.vy) >= v_star - 1e-12
        assert abs(stationary / n - 0.10) <= 0.01
        assert abs(extreme / n - 0.20) <= 0.015

        # Exclusion bound arithmetic straight from its definition.
        assert exclusion_speed([], 5.0, 20.0, limits) == pytest.approx((5.0 - 0.0) / 20.0)
        assert exclusion_speed([(1.0, 0.0)], 5.0, 20.0, CommandLimits(2.0, 1.0, 2.0)) == pytest.approx(0.0)
        # Upper clip at the tightest axis limit.
        assert exclusion_speed([], 5.0, 5.5, limits) == pytest.approx(0.5)
        prior = [(0.3, 0.4)]  # norm 0.5 -> 2.5 m covered
        expected = (5.0 - 0.5 * 5.0) / (20.0 - 5.0)
        assert exclusion_speed(prior, 5.0, 20.0, limits) == pytest.approx(expected)


# -- 9. dynamic sigma ------------------------------------------------------------------


def test_c9_dynamic_sigma():
    with criterion("sigma(L=0) identity x1000; sigma(L=10, v>=v_max) = per-terrain max"):
        rng = np.random.Generator(np.random.PCG64(41))
        for _ in range(1000):
            v = float(rng.uniform(0.0, 4.0))
            sigma_max = float(rng.uniform(0.3, 1.0))
            assert dynamic_sigma(0.25, sigma_max, v, level=0) == pytest.approx(0.25, abs=1e-15)
        for kind in ("flat", "wave", "slope_up", "stairs_up", "stairs_down", "obstacle"):
            sigma_max = sigma_max_for(kind)
            for v in (1.5, 2.0, 3.5):
                assert dynamic_sigma(0.25, sigma_max, v, level=10) == pytest.approx(sigma_max, abs=1e-12)
