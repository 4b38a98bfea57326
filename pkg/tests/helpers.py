"""Shared builders for synthetic traces and states used across test modules."""

from __future__ import annotations

import numpy as np

from gaitgauge.metrics import EpisodeTrace, TraceRecorder
from gaitgauge.robot import NUM_FEET, NUM_JOINTS, default_description
from gaitgauge.sim import RobotState, gravity_projection, quat_from_euler


def synthetic_trace(
    steps: int = 50,
    lin_shortfall: float = 0.0,
    ang_error: float = 0.0,
    power_per_joint: float = 0.0,
    outside_fraction: float = 0.0,
    gravity_y: float = 0.0,
    tau_step: float = 0.0,
    trial_ids=None,
) -> EpisodeTrace:
    """Trace with one controlled raw error per knob, zero everywhere else."""
    robot = default_description()
    rec = TraceRecorder(steps)
    n_outside = int(round(outside_fraction * NUM_JOINTS))
    q = robot.default_pose.copy()
    q[:n_outside] = robot.upper_limits[:n_outside]
    g = np.array([0.0, gravity_y, -np.sqrt(max(0.0, 1.0 - gravity_y**2))])
    for i in range(steps):
        tau = np.zeros(NUM_JOINTS)
        dq = np.zeros(NUM_JOINTS)
        if power_per_joint > 0:
            tau[:] = power_per_joint
            dq[:] = 1.0
        if tau_step > 0:
            tau = tau + (tau_step if i % 2 == 0 else 0.0)
        rec.append(
            t=(i + 1) * 0.02,
            command=np.array([1.0, 0.0, ang_error]),
            base_pos=np.array([i * 0.02, 0.0, 0.38]),
            base_quat=np.array([1.0, 0.0, 0.0, 0.0]),
            lin_vel=np.array([1.0 - lin_shortfall, 0.0, 0.0]),
            ang_vel=np.zeros(3),
            q=q,
            dq=dq,
            tau=tau,
            action=np.zeros(NUM_JOINTS),
            contacts=np.ones(NUM_FEET, dtype=bool),
            g_proj=g,
            fall=False,
            segment=0,
            trial=0 if trial_ids is None else trial_ids[i],
            collisions=0,
        )
    return rec.finish()


def random_state(rng: np.random.Generator) -> RobotState:
    quat = quat_from_euler(*rng.uniform(-0.4, 0.4, 3))
    return RobotState(
        base_pos=rng.uniform(-1, 1, 3) + np.array([0, 0, 0.38]),
        base_quat=quat,
        lin_vel=rng.uniform(-1.5, 1.5, 3),
        ang_vel=rng.uniform(-1.5, 1.5, 3),
        q=rng.uniform(-1.0, 1.0, NUM_JOINTS),
        dq=rng.uniform(-4.0, 4.0, NUM_JOINTS),
        tau=rng.uniform(-20.0, 20.0, NUM_JOINTS),
        contacts=np.ones(NUM_FEET, dtype=bool),
        g_proj=gravity_projection(quat),
    )
