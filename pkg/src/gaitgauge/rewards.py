"""Replay of the training reward table over states and traces.

Every term is computed exactly as printed: tracking exponentials
exp(-sigma * err^2), squared velocity/torque/action penalties, counts for
collisions and soft-limit violations, hip regulation, and the hip-symmetry
term (|vx_cmd| / ||v_cmd||) * (|q_FL + q_FR| + |q_RL + q_RR|) over hip
joints.  The multi-terrain and flat-ground high-speed weight variants are
both provided; the foot-regulation term is a pluggable hook defaulting to
zero because its formula lives outside this engine.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .goals import CommandTriple
from .metrics import EpisodeTrace
from .robot import HIP_INDICES, RobotDescription, default_description
from .sim import RobotState

REWARD_TERMS = (
    "lin_tracking",
    "ang_tracking",
    "lin_vel_z",
    "ang_vel_xy",
    "joint_acc",
    "joint_power",
    "joint_torque",
    "base_height",
    "action_rate",
    "action_smoothness",
    "collision",
    "joint_limit",
    "foot_regulation",
    "hip_regulation",
    "hip_symmetry",
)

_MULTI_TERRAIN_WEIGHTS = {
    "lin_tracking": 1.0,
    "ang_tracking": 0.5,
    "lin_vel_z": -2.0,
    "ang_vel_xy": -0.05,
    "joint_acc": -2.5e-7,
    "joint_power": -2e-5,
    "joint_torque": -1e-4,
    "base_height": -1.0,
    "action_rate": -0.01,
    "action_smoothness": -0.01,
    "collision": -1.0,
    "joint_limit": -2.0,
    "foot_regulation": -0.05,
    "hip_regulation": -0.05,
    "hip_symmetry": 0.0,
}


class RewardError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    sigma: float = 0.25
    desired_base_height: float = 0.38
    default_hip_pose: tuple[float, float, float, float] = (0.1, -0.1, 0.1, -0.1)
    weights: dict[str, float] = field(default_factory=lambda: dict(_MULTI_TERRAIN_WEIGHTS))
    # exp(-sigma * err^2) as printed; False switches to exp(-err^2 / sigma).
    tracking_exp_verbatim: bool = True
    foot_regulation_fn: Callable[[RobotState], float] | None = None

    def __post_init__(self) -> None:
        if self.desired_base_height <= 0:
            raise RewardError("desired base height must be positive")
        unknown = set(self.weights) - set(REWARD_TERMS)
        if unknown:
            raise RewardError(f"unknown reward terms {sorted(unknown)}")
        for name, w in self.weights.items():
            if not math.isfinite(w):
                raise RewardError(f"weight for {name} is not finite")

    def weight(self, term: str) -> float:
        return self.weights.get(term, 0.0)


def multi_terrain_config() -> RewardConfig:
    return RewardConfig()


def high_speed_config() -> RewardConfig:
    """Flat-ground variant: doubled linear tracking, hip symmetry active,
    lower reference height."""
    weights = dict(_MULTI_TERRAIN_WEIGHTS)
    weights["lin_tracking"] = 2.0
    weights["hip_symmetry"] = -1.0
    return RewardConfig(desired_base_height=0.33, weights=weights)


def hip_symmetry(q: np.ndarray, command: CommandTriple) -> float:
    """Left/right hip antisymmetry pressure, gated by how longitudinal the
    command is; defined as zero for a zero linear command."""
    norm = command.linear_norm()
    if norm == 0.0:
        return 0.0
    fl, fr, rl, rr = (q[i] for i in HIP_INDICES)
    return (abs(command.vx) / norm) * (abs(fl + fr) + abs(rl + rr))


@dataclass(frozen=True)
class RewardBreakdown:
    terms: dict[str, float]
    weighted: dict[str, float]
    total: float


def compute_step_rewards(
    state: RobotState,
    command: CommandTriple,
    action: np.ndarray,
    prev_action: np.ndarray,
    prev_prev_action: np.ndarray,
    prev_dq: np.ndarray,
    cfg: RewardConfig | None = None,
    robot: RobotDescription | None = None,
    dt: float = 0.02,
    support_height: float = 0.0,
    collisions: int = 0,
) -> RewardBreakdown:
    """All reward terms for one control step.

    Needs two previous actions (action smoothness) and the previous joint
    velocities (joint acceleration).  ``support_height`` is the terrain
    height under the base, so the base-height term measures clearance.
    """
    cfg = cfg or multi_terrain_config()
    robot = robot or default_description()

    v_body = state.body_lin_vel()
    lin_err_sq = float((command.vx - v_body[0]) ** 2 + (command.vy - v_body[1]) ** 2)
    ang_err_sq = float((command.wz - state.ang_vel[2]) ** 2)
    if cfg.tracking_exp_verbatim:
        lin_tracking = math.exp(-cfg.sigma * lin_err_sq)
        ang_tracking = math.exp(-cfg.sigma * ang_err_sq)
    else:
        lin_tracking = math.exp(-lin_err_sq / cfg.sigma)
        ang_tracking = math.exp(-ang_err_sq / cfg.sigma)

    ddq = (state.dq - prev_dq) / dt
    height = state.base_pos[2] - support_height
    n_limit = int(np.sum((state.q < robot.soft_lower) | (state.q > robot.soft_upper)))
    fr = 0.0 if cfg.foot_regulation_fn is None else float(cfg.foot_regulation_fn(state))

    terms = {
        "lin_tracking": lin_tracking,
        "ang_tracking": ang_tracking,
        "lin_vel_z": float(state.lin_vel[2] ** 2),
        "ang_vel_xy": float(state.ang_vel[0] ** 2 + state.ang_vel[1] ** 2),
        "joint_acc": float(np.sum(ddq**2)),
        "joint_power": float(np.sum(np.abs(state.tau) * np.abs(state.dq))),
        "joint_torque": float(np.sum(state.tau**2)),
        "base_height": float((cfg.desired_base_height - height) ** 2),
        "action_rate": float(np.sum((action - prev_action) ** 2)),
        "action_smoothness": float(np.sum((action - 2 * prev_action + prev_prev_action) ** 2)),
        "collision": float(collisions),
        "joint_limit": float(n_limit),
        "foot_regulation": fr,
        "hip_regulation": float(
            np.sum(np.abs(state.q[list(HIP_INDICES)] - np.asarray(cfg.default_hip_pose)))
        ),
        "hip_symmetry": hip_symmetry(state.q, command),
    }
    weighted = {name: cfg.weight(name) * value for name, value in terms.items()}
    return RewardBreakdown(terms=terms, weighted=weighted, total=sum(weighted.values()))


def _state_from_trace(trace: EpisodeTrace, i: int) -> RobotState:
    return RobotState(
        base_pos=trace.base_pos[i],
        base_quat=trace.base_quat[i],
        lin_vel=trace.lin_vel[i],
        ang_vel=trace.ang_vel[i],
        q=trace.q[i],
        dq=trace.dq[i],
        tau=trace.tau[i],
        contacts=trace.contacts[i],
        g_proj=trace.g_proj[i],
    )


@dataclass(frozen=True)
class RewardReport:
    means: dict[str, float]
    sums: dict[str, float]
    weighted_means: dict[str, float]
    total_mean: float
    steps: int

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["term", "mean", "sum", "weighted_mean"])
            for name in REWARD_TERMS:
                writer.writerow(
                    [
                        name,
                        format(self.means[name], ".12g"),
                        format(self.sums[name], ".12g"),
                        format(self.weighted_means[name], ".12g"),
                    ]
                )
            writer.writerow(["total", format(self.total_mean, ".12g"), "", ""])


def episode_reward_report(
    trace: EpisodeTrace,
    cfg: RewardConfig | None = None,
    robot: RobotDescription | None = None,
    terrain=None,
) -> RewardReport:
    """Per-term sums and means over a trace.

    The first two steps seed the action/velocity history and are not scored.
    When a terrain is supplied the base-height term uses clearance above it.
    """
    cfg = cfg or multi_terrain_config()
    n = len(trace)
    if n == 0:
        raise RewardError("empty trace")
    if n < 3:
        raise RewardError("trace too short for action smoothness (needs 3 steps)")
    dt = float(trace.time[1] - trace.time[0])
    totals = {name: 0.0 for name in REWARD_TERMS}
    weighted_totals = {name: 0.0 for name in REWARD_TERMS}
    count = 0
    for i in range(2, n):
        state = _state_from_trace(trace, i)
        support = 0.0
        if terrain is not None:
            x0, y0, x1, y1 = terrain.bounds
            x = min(max(trace.base_pos[i, 0], x0), x1)
            y = min(max(trace.base_pos[i, 1], y0), y1)
            support = terrain.height_at(x, y)
        breakdown = compute_step_rewards(
            state,
            CommandTriple(*trace.command[i]),
            action=trace.action[i],
            prev_action=trace.action[i - 1],
            prev_prev_action=trace.action[i - 2],
            prev_dq=trace.dq[i - 1],
            cfg=cfg,
            robot=robot,
            dt=dt,
            support_height=support,
            collisions=int(trace.collisions[i]),
        )
        for name, value in breakdown.terms.items():
            totals[name] += value
            weighted_totals[name] += breakdown.weighted[name]
        count += 1
    means = {name: totals[name] / count for name in REWARD_TERMS}
    weighted_means = {name: weighted_totals[name] / count for name in REWARD_TERMS}
    return RewardReport(
        means=means,
        sums=totals,
        weighted_means=weighted_means,
        total_mean=sum(weighted_means.values()),
        steps=count,
    )


def with_weight(cfg: RewardConfig, term: str, weight: float) -> RewardConfig:
    weights = dict(cfg.weights)
    weights[term] = weight
    return replace(cfg, weights=weights)
