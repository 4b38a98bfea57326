"""Episode execution: drives one policy through one goal schedule on one
backend, recording the trace that metrics and rewards consume.

The engine owns observation assembly and noise, goal segment switching, the
target-position controller, fall detection, and the collision proxy, so any
backend that satisfies the simulator contract behaves identically here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bridge import EpisodeDone
from .goals import CommandTriple, GoalSchedule, Segment, target_position_controller
from .metrics import EpisodeTrace, TraceRecorder
from .policy import Policy
from .robot import NUM_JOINTS
from .sim import DomainRandomization, FallDetector, RobotState, SimConfig, observe
from .terrain import Heightfield

COLLISION_CLEARANCE_M = 0.08


@dataclass
class EpisodeResult:
    trace: EpisodeTrace
    fell: bool
    goal_reached: bool


def _support_height(terrain: Heightfield, x: float, y: float) -> float:
    x0, y0, x1, y1 = terrain.bounds
    return terrain.height_at(min(max(x, x0), x1), min(max(y, y0), y1))


def run_goal_episode(
    backend,
    policy: Policy,
    terrain: Heightfield,
    dr: DomainRandomization,
    seed: int,
    schedule: GoalSchedule,
    record_latents: bool = False,
) -> EpisodeResult:
    """Run one goal schedule to completion, a fall, or goal arrival."""
    cfg: SimConfig = backend.config
    state: RobotState = backend.reset(terrain, dr, seed)
    policy.reset(seed)
    noise_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0x0B5])))
    detector = FallDetector(control_hz=cfg.control_hz)

    spawn_xy = (float(state.base_pos[0]), float(state.base_pos[1]))
    target_xy = None
    if schedule.target is not None:
        target_xy = (spawn_xy[0] + schedule.target.offset_x, spawn_xy[1] + schedule.target.offset_y)

    capacity = int(math.ceil(schedule.total_duration * cfg.control_hz)) + 2
    recorder = TraceRecorder(capacity)
    noise_scale = cfg.noise.scale_vector()
    prev_action = np.zeros(NUM_JOINTS)
    t = 0.0
    goal_reached = False
    fell = False
    done = False
    first_xy: tuple[float, float] | None = None  # displacement basis = first record

    for seg_index, segment in enumerate(schedule.segments):
        if done:
            break
        steps = int(round(segment.duration_s * cfg.control_hz))
        fixed_cmd = segment.command.as_tuple() if segment.command is not None else None
        fixed_cmd_np = np.asarray(fixed_cmd) if fixed_cmd is not None else None
        for _ in range(steps):
            if fixed_cmd is not None:
                cmd_tuple, cmd_np = fixed_cmd, fixed_cmd_np
            else:
                cmd = _segment_command(segment, schedule, state, target_xy)
                cmd_tuple = cmd.as_tuple()
                cmd_np = np.asarray(cmd_tuple)
            obs = observe(state, cmd_tuple, prev_action, noise_rng, cfg.noise, noise_scale)
            action = np.clip(policy.act(obs), -cfg.action_clip, cfg.action_clip)
            try:
                state = backend.step(action)
            except EpisodeDone as stop:
                # Backend-side termination: honor it, flagging backend falls.
                fell = fell or stop.reason == "fall"
                done = True
                break
            t += cfg.control_dt

            support = _support_height(terrain, state.base_pos[0], state.base_pos[1])
            fell = detector.update(state, support)
            collision = int(state.base_pos[2] - support < COLLISION_CLEARANCE_M)
            recorder.append(
                t=t,
                command=cmd_np,
                base_pos=state.base_pos,
                base_quat=state.base_quat,
                lin_vel=state.lin_vel,
                ang_vel=state.ang_vel,
                q=state.q,
                dq=state.dq,
                tau=state.tau,
                action=action,
                contacts=state.contacts,
                g_proj=state.g_proj,
                fall=fell,
                segment=seg_index,
                trial=segment.trial,
                collisions=collision,
            )
            prev_action = action

            if first_xy is None:
                first_xy = (float(state.base_pos[0]), float(state.base_pos[1]))
            if fell:
                done = True
                break
            if target_xy is not None:
                displacement = math.hypot(state.base_pos[0] - first_xy[0], state.base_pos[1] - first_xy[1])
                dist = math.hypot(state.base_pos[0] - target_xy[0], state.base_pos[1] - target_xy[1])
                if displacement >= schedule.target.min_displacement_m or dist <= schedule.target.tolerance:
                    goal_reached = True
                    done = True
                    break
        if done:
            break

    trace = recorder.finish(
        metadata={
            "goal": schedule.kind,
            "seed": int(seed),
            "terrain": None if terrain.spec is None else terrain.spec.kind,
            "difficulty": None if terrain.spec is None else terrain.spec.difficulty,
        }
    )
    return EpisodeResult(trace=trace, fell=fell, goal_reached=goal_reached)


def _segment_command(
    segment: Segment,
    schedule: GoalSchedule,
    state: RobotState,
    target_xy: tuple[float, float] | None,
) -> CommandTriple:
    if segment.command is not None:
        return segment.command
    assert schedule.target is not None and target_xy is not None
    w, x, y, z = state.base_quat
    yaw = math.atan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z))
    return target_position_controller(
        (float(state.base_pos[0]), float(state.base_pos[1])),
        yaw,
        target_xy,
        schedule.limits,
        kp=schedule.target.kp,
        kp_heading=schedule.target.kp_heading,
    )


def run_fixed_command(
    backend,
    policy: Policy,
    terrain: Heightfield,
    dr: DomainRandomization,
    seed: int,
    command: tuple[float, float, float],
    duration_s: float,
) -> EpisodeTrace:
    """Single-segment episode holding one command; used by gait references
    and latent dumps."""
    from .goals import CommandLimits

    vx, vy, wz = command
    limits = CommandLimits(max(abs(vx), 0.1), max(abs(vy), 0.1), max(abs(wz), 0.1))
    schedule = GoalSchedule(
        kind="max_velocity",
        segments=(Segment(trial=0, duration_s=duration_s, command=CommandTriple(vx, vy, wz)),),
        limits=limits,
    )
    return run_goal_episode(backend, policy, terrain, dr, seed, schedule).trace
