"""Simulator contract, domain randomization, and the deterministic reference
backend.

The reference simulator is not a physics engine.  It is a kinodynamic proxy:
the base rides the heightfield, joints follow their position targets through
first-order dynamics, and torques come from the PD law on those targets.  Its
tracking error grows monotonically with terrain difficulty and with falling
friction, and it falls deterministically whenever the configured capability
profile rejects the (terrain, level, seed) cell.  Everything downstream
(metrics, level search, scoring) is therefore verifiable against closed-form
ground truth, while physical fidelity is delegated to external backends
speaking the wire protocol.

Actions are joint-position offsets.  The proxy derives a base-motion intent
from them through a fixed linear decode: the mean thigh offset commands
longitudinal speed, and two orthogonal hip patterns command lateral speed and
yaw rate.  The scripted trot policy encodes commands through this map and
superimposes a diagonal-pair gait oscillation that the decode cannot see.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .robot import HIP_INDICES, NUM_FEET, NUM_JOINTS, THIGH_INDICES, RobotDescription, default_description
from .terrain import Heightfield, spawn_point

OBSERVATION_DIM = 45

# rad of joint offset per unit of base-motion intent (m/s or rad/s).
INTENT_GAIN = 0.25
# Sign patterns over (FL, FR, RL, RR) hips; mutually orthogonal and both
# orthogonal to the diagonal trot pattern (+1, -1, -1, +1).
LATERAL_PATTERN = (-1.0, 1.0, -1.0, 1.0)
YAW_PATTERN = (-1.0, -1.0, 1.0, 1.0)
TROT_PATTERN = (1.0, -1.0, -1.0, 1.0)


class SimError(RuntimeError):
    pass


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def quat_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """(w, x, y, z) quaternion from ZYX euler angles."""
    cr, sr = math.cos(roll / 2), math.sin(roll / 2)
    cp, sp = math.cos(pitch / 2), math.sin(pitch / 2)
    cy, sy = math.cos(yaw / 2), math.sin(yaw / 2)
    return np.array(
        [
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        ]
    )


def quat_to_euler(q: np.ndarray) -> tuple[float, float, float]:
    w, x, y, z = q
    roll = math.atan2(2 * (w * x + y * z), 1 - 2 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2 * (w * y - z * x))))
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return roll, pitch, yaw


def quat_rotate_inverse(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a world-frame vector into the body frame (R^T v, expanded)."""
    w, x, y, z = (float(c) for c in q)
    v0, v1, v2 = (float(c) for c in v)
    return np.array(
        [
            (1 - 2 * (y * y + z * z)) * v0 + 2 * (x * y + w * z) * v1 + 2 * (x * z - w * y) * v2,
            2 * (x * y - w * z) * v0 + (1 - 2 * (x * x + z * z)) * v1 + 2 * (y * z + w * x) * v2,
            2 * (x * z + w * y) * v0 + 2 * (y * z - w * x) * v1 + (1 - 2 * (x * x + y * y)) * v2,
        ]
    )


def quat_rotate_inverse_batch(quats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Row-wise world-to-body rotation for (N, 4) quaternions, (N, 3) vectors."""
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    v0, v1, v2 = vecs[:, 0], vecs[:, 1], vecs[:, 2]
    out = np.empty_like(vecs)
    out[:, 0] = (1 - 2 * (y * y + z * z)) * v0 + 2 * (x * y + w * z) * v1 + 2 * (x * z - w * y) * v2
    out[:, 1] = 2 * (x * y - w * z) * v0 + (1 - 2 * (x * x + z * z)) * v1 + 2 * (y * z + w * x) * v2
    out[:, 2] = 2 * (x * z + w * y) * v0 + 2 * (y * z - w * x) * v1 + (1 - 2 * (x * x + y * y)) * v2
    return out


def gravity_projection(q: np.ndarray) -> np.ndarray:
    w, x, y, z = (float(c) for c in q)
    return np.array([-2 * (x * z - w * y), -2 * (y * z + w * x), -(1 - 2 * (x * x + y * y))])


@dataclass
class RobotState:
    """Snapshot of the robot at one control step.

    ``lin_vel`` is world-frame; ``ang_vel`` is body-frame (IMU convention).
    """

    base_pos: np.ndarray
    base_quat: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    tau: np.ndarray
    contacts: np.ndarray
    g_proj: np.ndarray

    def validate(self) -> None:
        checks = (
            (self.base_pos, 3),
            (self.base_quat, 4),
            (self.lin_vel, 3),
            (self.ang_vel, 3),
            (self.q, NUM_JOINTS),
            (self.dq, NUM_JOINTS),
            (self.tau, NUM_JOINTS),
            (self.contacts, NUM_FEET),
            (self.g_proj, 3),
        )
        for arr, n in checks:
            if np.asarray(arr).shape != (n,):
                raise SimError(f"state field has shape {np.asarray(arr).shape}, expected ({n},)")
            if arr is not self.contacts and not np.all(np.isfinite(arr)):
                raise SimError("non-finite value in robot state")
        if abs(np.linalg.norm(self.base_quat) - 1.0) > 1e-6:
            raise SimError("base quaternion is not normalized")
        if abs(np.linalg.norm(self.g_proj) - 1.0) > 1e-6:
            raise SimError("projected gravity is not a unit vector")

    def copy(self) -> "RobotState":
        return RobotState(
            base_pos=self.base_pos.copy(),
            base_quat=self.base_quat.copy(),
            lin_vel=self.lin_vel.copy(),
            ang_vel=self.ang_vel.copy(),
            q=self.q.copy(),
            dq=self.dq.copy(),
            tau=self.tau.copy(),
            contacts=self.contacts.copy(),
            g_proj=self.g_proj.copy(),
        )

    def body_lin_vel(self) -> np.ndarray:
        return quat_rotate_inverse(self.base_quat, self.lin_vel)


_DR_RANGES = {
    "friction": (0.1, 1.5),
    "payload_mass": (-1.0, 1.0),
    "link_mass_scale": (0.9, 1.1),
    "restitution": (0.0, 0.5),
    "kp_scale": (0.9, 1.1),
    "kd_scale": (0.9, 1.1),
    "actuator_strength_scale": (0.8, 1.2),
    "actuator_offset": (-0.035, 0.035),
    "control_latency": (0.0, 0.020),
}
_COM_LIMIT_M = 0.03


@dataclass(frozen=True)
class DomainRandomization:
    """Concrete randomization values applied to one episode.

    Ranges are validated against the sampling table (training ranges, widened
    to admit the evaluation friction sweep down to 0.1).
    """

    friction: float = 1.0
    payload_mass: float = 0.0
    link_mass_scale: float = 1.0
    com_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    restitution: float = 0.0
    kp_scale: float = 1.0
    kd_scale: float = 1.0
    actuator_strength_scale: float = 1.0
    actuator_offset: float = 0.0
    control_latency: float = 0.0

    def __post_init__(self) -> None:
        for name, (lo, hi) in _DR_RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside sampling range [{lo}, {hi}]")
        if any(abs(c) > _COM_LIMIT_M + 1e-12 for c in self.com_offset):
            raise ValueError(f"com_offset {self.com_offset} outside +/-{_COM_LIMIT_M} m")

    def to_dict(self) -> dict:
        return {
            "friction": self.friction,
            "payload_mass": self.payload_mass,
            "link_mass_scale": self.link_mass_scale,
            "com_offset": list(self.com_offset),
            "restitution": self.restitution,
            "kp_scale": self.kp_scale,
            "kd_scale": self.kd_scale,
            "actuator_strength_scale": self.actuator_strength_scale,
            "actuator_offset": self.actuator_offset,
            "control_latency": self.control_latency,
        }

    @staticmethod
    def from_dict(doc: dict) -> "DomainRandomization":
        doc = dict(doc)
        if "com_offset" in doc:
            doc["com_offset"] = tuple(doc["com_offset"])
        return DomainRandomization(**doc)


def nominal_dr() -> DomainRandomization:
    return DomainRandomization()


def friction_sweep(points: int = 9) -> list[tuple[str, DomainRandomization]]:
    """Named friction presets: 9 points cover 0.2..1.0, 10 points 0.1..1.0."""
    if points not in (9, 10):
        raise ValueError("friction sweep supports 9 or 10 points")
    start = 2 if points == 9 else 1
    presets = []
    for i in range(start, 11):
        mu = i / 10.0
        presets.append((f"friction_{mu:.1f}", DomainRandomization(friction=mu)))
    return presets


def variant_presets() -> list[tuple[str, DomainRandomization]]:
    """Optional single-factor perturbations beyond the friction sweep."""
    return [
        ("payload_heavy", DomainRandomization(payload_mass=1.0)),
        ("payload_light", DomainRandomization(payload_mass=-1.0)),
        ("latency_20ms", DomainRandomization(control_latency=0.020)),
        ("weak_actuators", DomainRandomization(actuator_strength_scale=0.8)),
        ("com_forward", DomainRandomization(com_offset=(0.03, 0.0, 0.0))),
    ]


def sample_training_dr(rng: np.random.Generator) -> DomainRandomization:
    """Draw one randomization from the training-style table ranges."""
    return DomainRandomization(
        friction=rng.uniform(0.5, 1.5),
        payload_mass=rng.uniform(-1.0, 1.0),
        link_mass_scale=rng.uniform(0.9, 1.1),
        com_offset=tuple(rng.uniform(-0.03, 0.03, size=3)),
        restitution=rng.uniform(0.0, 0.5),
        kp_scale=rng.uniform(0.9, 1.1),
        kd_scale=rng.uniform(0.9, 1.1),
        actuator_strength_scale=rng.uniform(0.8, 1.2),
        actuator_offset=rng.uniform(-0.035, 0.035),
        control_latency=rng.uniform(0.0, 0.020),
    )


@dataclass(frozen=True)
class NoiseConfig:
    """Additive uniform observation noise, per channel group."""

    enabled: bool = True
    ang_vel: float = 0.05
    gravity: float = 0.025
    joint_pos: float = 0.01
    joint_vel: float = 1.5

    def scale_vector(self) -> np.ndarray:
        s = np.zeros(OBSERVATION_DIM)
        s[0:3] = self.ang_vel
        s[3:6] = self.gravity
        s[6:18] = self.joint_pos
        s[18:30] = self.joint_vel
        return s


@dataclass(frozen=True)
class SimConfig:
    control_hz: int = 50
    physics_hz: int = 200
    kp: float = 20.0
    kd: float = 0.5
    action_clip: float = 4.8
    base_height: float = 0.38
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def __post_init__(self) -> None:
        if self.physics_hz % self.control_hz != 0:
            raise ValueError("physics_hz must be divisible by control_hz")

    @property
    def control_dt(self) -> float:
        return 1.0 / self.control_hz

    @property
    def physics_dt(self) -> float:
        return 1.0 / self.physics_hz

    @property
    def substeps(self) -> int:
        return self.physics_hz // self.control_hz


def observe(
    state: RobotState,
    cmd: tuple[float, float, float],
    prev_action: np.ndarray,
    noise_rng: np.random.Generator | None = None,
    noise: NoiseConfig | None = None,
    noise_scale: np.ndarray | None = None,
) -> np.ndarray:
    """45-dim observation: [ang_vel, g_proj, q, dq, cmd, prev_action].

    Commands and the previous action are exact; the proprioceptive groups get
    additive uniform noise when a generator is supplied and noise is enabled.
    Callers in a hot loop may pass the precomputed ``noise.scale_vector()``.
    """
    obs = np.empty(OBSERVATION_DIM)
    obs[0:3] = state.ang_vel
    obs[3:6] = state.g_proj
    obs[6:18] = state.q
    obs[18:30] = state.dq
    obs[30:33] = cmd
    obs[33:45] = prev_action
    if noise_rng is not None and noise is not None and noise.enabled:
        if noise_scale is None:
            noise_scale = noise.scale_vector()
        obs += noise_rng.uniform(-1.0, 1.0, OBSERVATION_DIM) * noise_scale
    return obs


def pd_torque(
    target: np.ndarray,
    q: np.ndarray,
    dq: np.ndarray,
    kp: float = 20.0,
    kd: float = 0.5,
    kp_scale: float = 1.0,
    kd_scale: float = 1.0,
    strength_scale: float = 1.0,
) -> np.ndarray:
    """PD law: tau = kp_scale*kp*(q* - q) - kd_scale*kd*dq, scaled by the
    actuator strength."""
    return strength_scale * (kp_scale * kp * (target - q) - kd_scale * kd * dq)


def _build_intent_bases() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    vx = np.zeros(NUM_JOINTS)
    vy = np.zeros(NUM_JOINTS)
    wz = np.zeros(NUM_JOINTS)
    for i in THIGH_INDICES:
        vx[i] = INTENT_GAIN
    for i, (sy, sw) in zip(HIP_INDICES, zip(LATERAL_PATTERN, YAW_PATTERN)):
        vy[i] = INTENT_GAIN * sy
        wz[i] = INTENT_GAIN * sw
    return vx, vy, wz


_VX_BASIS, _VY_BASIS, _WZ_BASIS = _build_intent_bases()


_INV_GAIN4 = 1.0 / (4.0 * INTENT_GAIN)


def decode_intent(action: np.ndarray) -> tuple[float, float, float]:
    """Base-motion intent (vx, vy, wz) encoded in a joint-offset action."""
    a0, a3, a6, a9 = action[0], action[3], action[6], action[9]
    vx = (action[1] + action[4] + action[7] + action[10]) * _INV_GAIN4
    vy = (-a0 + a3 - a6 + a9) * _INV_GAIN4
    wz = (-a0 - a3 + a6 + a9) * _INV_GAIN4
    return float(vx), float(vy), float(wz)


def encode_intent(vx: float, vy: float, wz: float) -> np.ndarray:
    """Joint offsets whose decode recovers (vx, vy, wz) exactly."""
    return vx * _VX_BASIS + vy * _VY_BASIS + wz * _WZ_BASIS


@dataclass(frozen=True)
class CapabilityProfile:
    """Ground-truth pass/fail law of the reference backend.

    Levels strictly below the cap always pass, levels above always fail; at
    the cap itself the outcome may be restricted to an explicit seed set so
    threshold rules (e.g. 4-of-5) can be exercised deterministically.
    """

    max_level: int | dict[str, int] = 10
    boundary_pass_seeds: frozenset[int] | None = None

    def level_cap(self, kind: str) -> int:
        if isinstance(self.max_level, dict):
            return self.max_level.get(kind, 10)
        return self.max_level

    def passes(self, kind: str, level: int, seed: int) -> bool:
        cap = self.level_cap(kind)
        if level < cap:
            return True
        if level > cap:
            return False
        if self.boundary_pass_seeds is None:
            return True
        return seed in self.boundary_pass_seeds


@dataclass(frozen=True)
class ReferenceSimConfig:
    capability: CapabilityProfile = field(default_factory=CapabilityProfile)
    deg_difficulty: float = 0.30
    deg_friction: float = 0.30
    deg_payload: float = 0.02
    vel_time_constant: float = 0.25
    yaw_time_constant: float = 0.15
    joint_time_constant: float = 0.04
    gait_frequency_hz: float = 1.8
    wobble_roll: float = 0.03
    com_attitude_gain: float = 0.5
    v_max: float = 4.5
    fall_window: tuple[float, float] = (1.0, 1.8)
    fall_duration: float = 0.3


class ReferenceSimulator:
    """Deterministic kinodynamic quadruped proxy.

    One instance is owned by exactly one evaluation worker; instances share
    nothing, so any number may run concurrently.
    """

    def __init__(
        self,
        sim_config: SimConfig | None = None,
        ref_config: ReferenceSimConfig | None = None,
        robot: RobotDescription | None = None,
    ) -> None:
        self.config = sim_config or SimConfig()
        self.ref = ref_config or ReferenceSimConfig()
        self.robot = robot or default_description()
        self._terrain: Heightfield | None = None
        self._state: RobotState | None = None

    # -- helpers ---------------------------------------------------------

    def _height(self, x: float, y: float) -> float:
        """Terrain support height; the tile extends flat beyond its edges."""
        hf = self._terrain
        assert hf is not None
        x0, y0, x1, y1 = hf.bounds
        return hf.height_at(min(max(x, x0), x1), min(max(y, y0), y1))

    def _terrain_attitude_and_support(self, x: float, y: float, yaw: float) -> tuple[float, float, float]:
        """(roll, pitch, support height) from forward/lateral differences."""
        if self._is_flat:
            return 0.0, 0.0, self._flat_support
        delta = 0.15
        c, s = math.cos(yaw), math.sin(yaw)
        h_c = self._height(x, y)
        dzdx = (self._height(x + delta * c, y + delta * s) - h_c) / delta
        dzdy = (self._height(x - delta * s, y + delta * c) - h_c) / delta
        return math.atan(dzdy), -math.atan(dzdx), h_c

    def _difficulty(self) -> float:
        hf = self._terrain
        if hf is None or hf.spec is None or hf.spec.kind == "flat":
            return 0.0
        return hf.spec.difficulty

    def _degradation(self) -> float:
        ref = self.ref
        dr = self._dr
        deg = (
            ref.deg_difficulty * self._difficulty()
            + ref.deg_friction * max(0.0, 1.0 - dr.friction)
            + ref.deg_payload * abs(dr.payload_mass)
            + 0.5 * max(0.0, 1.0 - dr.actuator_strength_scale)
        )
        return min(0.85, deg)

    # -- contract --------------------------------------------------------

    def reset(self, terrain: Heightfield, dr: DomainRandomization, seed: int) -> RobotState:
        self._terrain = terrain
        self._dr = dr
        self._seed = int(seed)
        self._t = 0.0
        cfg = self.config

        sx, sy = spawn_point(terrain)
        self._x, self._y = sx, sy
        self._yaw = 0.0
        self._vbx = 0.0
        self._vby = 0.0
        self._wz = 0.0

        latency_steps = round(dr.control_latency * cfg.physics_hz)
        self._latency_steps = latency_steps
        self._fifo: deque[np.ndarray] = deque(np.zeros(NUM_JOINTS) for _ in range(latency_steps))
        self._substeps = cfg.substeps
        decay = math.exp(-cfg.physics_dt / self.ref.joint_time_constant)
        self._decay_pow = [decay**n for n in range(cfg.substeps + 1)]
        self._inv_physics_dt = cfg.physics_hz
        self._base_target = self.robot.default_pose + dr.actuator_offset
        self._neg_torque_limit = -self.robot.torque_limits
        self._alpha_v = 1.0 - math.exp(-cfg.control_dt / self.ref.vel_time_constant)
        self._alpha_w = 1.0 - math.exp(-cfg.control_dt / self.ref.yaw_time_constant)
        self._intent_scale = 1.0 - self._degradation()
        self._is_flat = terrain.spec is not None and terrain.spec.kind == "flat"
        self._flat_support = self._height(sx, sy) if self._is_flat else 0.0
        self._d_eff = self._difficulty()

        level = 0
        kind = "flat"
        if terrain.spec is not None:
            kind = terrain.spec.kind
            level = round(terrain.spec.difficulty * 10)
        will_fall = not self.ref.capability.passes(kind, level, self._seed)
        fall_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self._seed, 0xFA11])))
        lo, hi = self.ref.fall_window
        self._t_fall = lo + (hi - lo) * fall_rng.random() if will_fall else math.inf

        self._q = self.robot.default_pose.copy()
        self._dq = np.zeros(NUM_JOINTS)
        self._tau = np.zeros(NUM_JOINTS)
        self._prev_roll, self._prev_pitch, _ = self._attitude(0.0)
        base_z = self._height(sx, sy) + cfg.base_height
        # Terrain towering into the body footprint means the spawn is invalid.
        for dx, dy in ((0.25, 0.0), (-0.25, 0.0), (0.0, 0.2), (0.0, -0.2)):
            if self._height(sx + dx, sy + dy) > base_z - 0.12:
                raise SimError(f"spawn collides with terrain at offset ({dx}, {dy})")

        self._state = self._make_state(base_z, self._prev_roll, self._prev_pitch, 0.0, 0.0, np.ones(NUM_FEET, dtype=bool))
        return self._state

    def _attitude(self, speed: float) -> tuple[float, float, float]:
        ref = self.ref
        terr_roll, terr_pitch, support = self._terrain_attitude_and_support(self._x, self._y, self._yaw)
        com = self._dr.com_offset
        roll = terr_roll + ref.com_attitude_gain * com[1]
        pitch = terr_pitch + ref.com_attitude_gain * com[0]
        wobble_amp = ref.wobble_roll * (0.3 + self._d_eff) * min(1.0, speed)
        roll += wobble_amp * math.sin(2 * math.pi * ref.gait_frequency_hz * self._t)
        return roll, pitch, support

    def _make_state(
        self,
        base_z: float,
        roll: float,
        pitch: float,
        omega_x: float,
        omega_y: float,
        contacts: np.ndarray,
    ) -> RobotState:
        quat = quat_from_euler(roll, pitch, self._yaw)
        c, s = math.cos(self._yaw), math.sin(self._yaw)
        vx, vy = self._vbx, self._vby
        lin_vel = np.array([vx * c - vy * s, vx * s + vy * c, 0.0])
        # q/dq/tau are rebound to fresh arrays every step, so the snapshot
        # can alias them safely.
        return RobotState(
            base_pos=np.array([self._x, self._y, base_z]),
            base_quat=quat,
            lin_vel=lin_vel,
            ang_vel=np.array([omega_x, omega_y, self._wz]),
            q=self._q,
            dq=self._dq,
            tau=self._tau,
            contacts=contacts,
            g_proj=gravity_projection(quat),
        )

    def step(self, action: np.ndarray) -> RobotState:
        if self._state is None:
            raise SimError("step called before reset")
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (NUM_JOINTS,):
            raise SimError(f"action must have shape ({NUM_JOINTS},)")
        if not np.all(np.isfinite(action)):
            raise SimError("non-finite action")
        cfg, ref, dr = self.config, self.ref, self._dr
        clip = cfg.action_clip
        action = np.minimum(np.maximum(action, -clip), clip)

        # Latency FIFO quantized to physics steps.  Runs of constant
        # effective action coalesce, so the first-order joint update stays
        # closed-form per run instead of per substep.
        fifo = self._fifo
        segments: list[list] = []
        for _ in range(self._substeps):
            fifo.append(action)
            eff = fifo.popleft()
            if segments and segments[-1][0] is eff:
                segments[-1][1] += 1
            else:
                segments.append([eff, 1])
        q = self._q
        decay_pow = self._decay_pow
        base_target = self._base_target
        for eff, count in segments[:-1]:
            target = base_target + eff
            q = target + (q - target) * decay_pow[count]
        effective, count = segments[-1]
        target = base_target + effective
        if count > 1:
            q = target + (q - target) * decay_pow[count - 1]
        q_prev = q
        q = target + (q - target) * decay_pow[1]
        self._q = q
        self._dq = (q - q_prev) * self._inv_physics_dt
        tau = pd_torque(
            target,
            q,
            self._dq,
            kp=cfg.kp,
            kd=cfg.kd,
            kp_scale=dr.kp_scale,
            kd_scale=dr.kd_scale,
            strength_scale=dr.actuator_strength_scale,
        )
        self._tau = np.minimum(np.maximum(tau, self._neg_torque_limit), self.robot.torque_limits)

        # Base response to the decoded intent, degraded by terrain/DR.
        self._t += cfg.control_dt
        fallen = self._t >= self._t_fall
        vx_i, vy_i, wz_i = decode_intent(effective)
        scale = self._intent_scale
        v_cap = ref.v_max
        if fallen:
            vtx = vty = wz_tgt = 0.0
        else:
            vtx = min(v_cap, max(-v_cap, vx_i * scale))
            vty = min(v_cap, max(-v_cap, vy_i * scale))
            wz_tgt = min(v_cap, max(-v_cap, wz_i * scale))
        self._vbx += (vtx - self._vbx) * self._alpha_v
        self._vby += (vty - self._vby) * self._alpha_v
        self._wz += (wz_tgt - self._wz) * self._alpha_w

        c, s = math.cos(self._yaw), math.sin(self._yaw)
        vx, vy = self._vbx, self._vby
        self._x += (vx * c - vy * s) * cfg.control_dt
        self._y += (vx * s + vy * c) * cfg.control_dt
        self._yaw += self._wz * cfg.control_dt

        speed = math.hypot(self._vbx, self._vby)
        roll, pitch, support = self._attitude(speed)
        base_z = support + cfg.base_height
        if fallen:
            progress = min(1.0, (self._t - self._t_fall) / ref.fall_duration)
            roll += 1.5 * progress
            base_z = support + cfg.base_height + (0.05 - cfg.base_height) * progress

        omega_x = (roll - self._prev_roll) / cfg.control_dt
        omega_y = (pitch - self._prev_pitch) / cfg.control_dt
        self._prev_roll, self._prev_pitch = roll, pitch

        moving = speed > 0.05 or abs(self._wz) > 0.05
        if moving and not fallen:
            phase = math.sin(2 * math.pi * ref.gait_frequency_hz * self._t)
            pair_a = phase >= 0.0
            contacts = np.array([pair_a, not pair_a, not pair_a, pair_a])
        else:
            contacts = np.ones(NUM_FEET, dtype=bool)

        self._state = self._make_state(base_z, roll, pitch, omega_x, omega_y, contacts)
        return self._state

    def close(self) -> None:
        self._state = None
        self._terrain = None

    @property
    def terrain(self) -> Heightfield | None:
        return self._terrain

    def support_height(self) -> float:
        """Terrain height under the current base position."""
        return self._height(self._x, self._y)


@dataclass
class FallDetector:
    """Flags a fall once the failure condition holds for a sustained window."""

    min_clearance: float = 0.12
    max_tilt: float = 1.0
    window_s: float = 0.1
    control_hz: int = 50
    _count: int = 0
    fallen: bool = False

    def update(self, state: RobotState, support_height: float) -> bool:
        g = state.g_proj
        pitch = math.asin(max(-1.0, min(1.0, float(g[0]))))
        roll = math.atan2(-float(g[1]), -float(g[2]))
        clearance = float(state.base_pos[2]) - support_height
        bad = clearance < self.min_clearance or abs(roll) > self.max_tilt or abs(pitch) > self.max_tilt
        self._count = self._count + 1 if bad else 0
        if self._count >= max(1, round(self.window_s * self.control_hz)):
            self.fallen = True
        return self.fallen


def run_reference_gait(
    terrain: Heightfield,
    speed_cmd: tuple[float, float, float],
    duration_s: float = 5.0,
    dr: DomainRandomization | None = None,
    seed: int = 0,
    sim_config: SimConfig | None = None,
    ref_config: ReferenceSimConfig | None = None,
):
    """Run the built-in trot on a fixed command and return the episode trace."""
    from .episode import run_fixed_command
    from .policy import scripted_policy

    sim = ReferenceSimulator(sim_config=sim_config, ref_config=ref_config)
    policy = scripted_policy("trot_tracker")
    return run_fixed_command(
        sim,
        policy,
        terrain,
        dr or nominal_dr(),
        seed,
        command=speed_cmd,
        duration_s=duration_s,
    )


def replace_capability(ref: ReferenceSimConfig, capability: CapabilityProfile) -> ReferenceSimConfig:
    return replace(ref, capability=capability)
