from __future__ import annotations

import numpy as np
import pytest

from gaitgauge import sim as simmod
from gaitgauge.robot import NUM_JOINTS, default_description
from gaitgauge.sim import (
    CapabilityProfile,
    DomainRandomization,
    NoiseConfig,
    ReferenceSimConfig,
    ReferenceSimulator,
    SimConfig,
    SimError,
    decode_intent,
    encode_intent,
    gravity_projection,
    nominal_dr,
    observe,
    pd_torque,
    quat_from_euler,
    quat_to_euler,
    run_reference_gait,
)
from gaitgauge.terrain import TerrainSpec, generate


def flat_terrain():
    return generate(TerrainSpec(kind="flat", difficulty=0.5))


def test_reset_flat_nominal():
    s = ReferenceSimulator()
    state = s.reset(flat_terrain(), nominal_dr(), seed=0)
    state.validate()
    assert state.base_pos[2] == pytest.approx(0.38, abs=1e-9)
    assert np.allclose(state.q, default_description().default_pose)
    assert np.allclose(state.lin_vel, 0.0)


def test_reset_deterministic():
    terrain = generate(TerrainSpec(kind="rough_slope", difficulty=0.4, seed=9))
    dr = DomainRandomization(friction=0.7, control_latency=0.01)
    a = ReferenceSimulator().reset(terrain, dr, seed=123)
    b = ReferenceSimulator().reset(terrain, dr, seed=123)
    for field in ("base_pos", "base_quat", "q", "dq", "g_proj"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_step_trajectory_deterministic():
    terrain = generate(TerrainSpec(kind="wave", difficulty=0.6))
    dr = DomainRandomization(friction=0.5)
    action = encode_intent(0.8, 0.0, 0.2)

    def rollout():
        s = ReferenceSimulator()
        s.reset(terrain, dr, seed=7)
        return [s.step(action).base_pos.copy() for _ in range(50)]

    for p, q in zip(rollout(), rollout()):
        assert np.array_equal(p, q)


def test_com_offset_pitch_bias():
    s = ReferenceSimulator()
    state = s.reset(flat_terrain(), DomainRandomization(com_offset=(0.03, 0.0, 0.0)), seed=0)
    _, pitch, _ = quat_to_euler(state.base_quat)
    assert pitch == pytest.approx(0.5 * 0.03, abs=1e-9)
    nominal = ReferenceSimulator().reset(flat_terrain(), nominal_dr(), seed=0)
    _, pitch0, _ = quat_to_euler(nominal.base_quat)
    assert abs(pitch) > abs(pitch0)


def test_pd_torque_printed_example():
    # 0.1 rad position error at rest under nominal gains.
    target = np.full(NUM_JOINTS, 0.1)
    tau = pd_torque(target, np.zeros(NUM_JOINTS), np.zeros(NUM_JOINTS))
    assert np.allclose(tau, 2.0, atol=1e-12)


def test_pd_zero_at_setpoint():
    s = ReferenceSimulator()
    s.reset(flat_terrain(), nominal_dr(), seed=0)
    state = s.step(np.zeros(NUM_JOINTS))
    assert np.allclose(state.tau, 0.0, atol=1e-9)
    assert np.allclose(state.q, default_description().default_pose, atol=1e-9)


def test_step_before_reset_raises():
    with pytest.raises(SimError):
        ReferenceSimulator().step(np.zeros(NUM_JOINTS))


def test_non_finite_action_raises():
    s = ReferenceSimulator()
    s.reset(flat_terrain(), nominal_dr(), seed=0)
    bad = np.zeros(NUM_JOINTS)
    bad[3] = np.nan
    with pytest.raises(SimError):
        s.step(bad)


def test_latency_delays_exactly_one_control_step():
    terrain = flat_terrain()
    action = np.full(NUM_JOINTS, 0.3)
    default = default_description().default_pose

    delayed = ReferenceSimulator()
    delayed.reset(terrain, DomainRandomization(control_latency=0.020), seed=0)
    assert len(delayed._fifo) == 4  # round(0.020 * 200)
    after_one = delayed.step(action)
    assert np.allclose(after_one.q, default, atol=1e-9)  # still the old zeros
    after_two = delayed.step(action)
    assert np.max(np.abs(after_two.q - default)) > 0.05

    prompt = ReferenceSimulator()
    prompt.reset(terrain, nominal_dr(), seed=0)
    immediate = prompt.step(action)
    assert np.max(np.abs(immediate.q - default)) > 0.05


def test_intent_codec_roundtrip():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(20):
        vx, vy, wz = rng.uniform(-2, 2, 3)
        assert decode_intent(encode_intent(vx, vy, wz)) == pytest.approx((vx, vy, wz), abs=1e-12)
    # The trot oscillation pattern is invisible to the decode.
    osc = np.zeros(NUM_JOINTS)
    for leg, sign in enumerate(simmod.TROT_PATTERN):
        osc[1 + 3 * leg] = 0.2 * sign
    assert decode_intent(encode_intent(1.0, 0.5, -0.5) + osc) == pytest.approx((1.0, 0.5, -0.5), abs=1e-12)


def test_observation_layout_and_noise():
    s = ReferenceSimulator(sim_config=SimConfig(noise=NoiseConfig(enabled=False)))
    state = s.reset(flat_terrain(), nominal_dr(), seed=0)
    prev = np.zeros(NUM_JOINTS)
    obs = observe(state, (0.5, 0.0, 0.1), prev)
    assert obs.shape == (45,)
    assert np.allclose(obs[0:3], state.ang_vel)
    assert np.allclose(obs[3:6], state.g_proj)
    assert np.allclose(obs[6:18], state.q)
    assert np.allclose(obs[18:30], state.dq)
    assert np.allclose(obs[30:33], (0.5, 0.0, 0.1))
    assert np.allclose(obs[33:45], prev)
    # Disabled noise: deterministic in the state.
    again = observe(state, (0.5, 0.0, 0.1), prev)
    assert np.array_equal(obs, again)
    # Enabled noise leaves commands and previous action exact.
    rng = np.random.Generator(np.random.PCG64(0))
    noisy = observe(state, (0.5, 0.0, 0.1), prev, rng, NoiseConfig())
    assert np.allclose(noisy[30:33], (0.5, 0.0, 0.1))
    assert np.allclose(noisy[33:45], prev)
    assert not np.array_equal(noisy[:30], obs[:30])


def test_level_static_gravity():
    s = ReferenceSimulator()
    state = s.reset(flat_terrain(), nominal_dr(), seed=0)
    assert np.allclose(state.g_proj, (0.0, 0.0, -1.0), atol=1e-9)
    assert np.allclose(state.ang_vel, 0.0, atol=1e-9)


def test_reference_gait_tracks_on_flat():
    trace = run_reference_gait(flat_terrain(), (1.0, 0.0, 0.0), duration_s=5.0)
    v_body = trace.body_lin_vel()
    steady = v_body[-100:, 0]
    assert np.all(np.abs(steady - 1.0) <= 0.05)


def test_reference_gait_falls_above_capability():
    ref = ReferenceSimConfig(capability=CapabilityProfile(max_level=3))
    stairs = generate(TerrainSpec(kind="stairs_up", difficulty=0.5))
    trace = run_reference_gait(stairs, (1.0, 0.0, 0.0), duration_s=5.0, ref_config=ref)
    assert trace.fell()
    easy = generate(TerrainSpec(kind="stairs_up", difficulty=0.3))
    trace = run_reference_gait(easy, (1.0, 0.0, 0.0), duration_s=5.0, ref_config=ref)
    assert not trace.fell()


def test_friction_monotone_tracking_error():
    def steady_error(friction: float) -> float:
        trace = run_reference_gait(
            flat_terrain(), (1.0, 0.0, 0.0), duration_s=5.0, dr=DomainRandomization(friction=friction)
        )
        v_body = trace.body_lin_vel()
        return float(np.mean(np.abs(v_body[-100:, 0] - 1.0)))

    assert steady_error(0.1) > steady_error(0.5) > steady_error(1.0)


def test_velocity_bounded():
    cfg = ReferenceSimConfig(v_max=2.0)
    s = ReferenceSimulator(ref_config=cfg)
    s.reset(flat_terrain(), nominal_dr(), seed=0)
    action = encode_intent(10.0, 0.0, 0.0)
    for _ in range(200):
        state = s.step(action)
    assert np.linalg.norm(state.lin_vel) <= 2.0 + 1e-9


def test_state_invariants_along_rough_episode():
    terrain = generate(TerrainSpec(kind="rough_slope", difficulty=0.8, seed=3))
    s = ReferenceSimulator()
    s.reset(terrain, DomainRandomization(friction=0.4), seed=5)
    action = encode_intent(1.0, 0.2, 0.3)
    for _ in range(100):
        state = s.step(action)
        state.validate()


def test_dr_range_validation():
    with pytest.raises(ValueError):
        DomainRandomization(friction=0.05)
    with pytest.raises(ValueError):
        DomainRandomization(payload_mass=2.0)
    with pytest.raises(ValueError):
        DomainRandomization(com_offset=(0.05, 0.0, 0.0))
    with pytest.raises(ValueError):
        DomainRandomization(control_latency=0.5)
    DomainRandomization(friction=0.1)  # evaluation sweep low end is allowed


def test_friction_sweep_presets():
    nine = simmod.friction_sweep(9)
    assert len(nine) == 9
    assert nine[0][0] == "friction_0.2" and nine[-1][0] == "friction_1.0"
    ten = simmod.friction_sweep(10)
    assert len(ten) == 10 and ten[0][0] == "friction_0.1"
    with pytest.raises(ValueError):
        simmod.friction_sweep(7)


def test_sample_training_dr_within_ranges():
    rng = np.random.Generator(np.random.PCG64(0))
    for _ in range(50):
        dr = simmod.sample_training_dr(rng)
        assert 0.5 <= dr.friction <= 1.5
        assert 0.8 <= dr.actuator_strength_scale <= 1.2


def test_sim_config_divisibility():
    with pytest.raises(ValueError):
        SimConfig(control_hz=60, physics_hz=200)


def test_quaternion_euler_roundtrip():
    rng = np.random.Generator(np.random.PCG64(1))
    for _ in range(50):
        roll, pitch, yaw = rng.uniform(-1.0, 1.0, 3)
        q = quat_from_euler(roll, pitch, yaw)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        r2, p2, y2 = quat_to_euler(q)
        assert (r2, p2, y2) == pytest.approx((roll, pitch, yaw), abs=1e-9)


def test_gravity_projection_unit_norm():
    rng = np.random.Generator(np.random.PCG64(2))
    for _ in range(50):
        q = quat_from_euler(*rng.uniform(-1.5, 1.5, 3))
        g = gravity_projection(q)
        assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-12)


def test_capability_profile_semantics():
    profile = CapabilityProfile(max_level=6)
    assert profile.passes("stairs_up", 5, seed=1)
    assert profile.passes("stairs_up", 6, seed=1)
    assert not profile.passes("stairs_up", 7, seed=1)
    gated = CapabilityProfile(max_level=6, boundary_pass_seeds=frozenset({10, 20}))
    assert gated.passes("wave", 6, seed=10)
    assert not gated.passes("wave", 6, seed=30)
    assert gated.passes("wave", 5, seed=30)
    per_kind = CapabilityProfile(max_level={"wave": 3})
    assert per_kind.passes("wave", 3, seed=0) and not per_kind.passes("wave", 4, seed=0)
    assert per_kind.passes("flat", 10, seed=0)
