"""Motion goals for evaluation and the training-side command mathematics.

Three goal kinds exercise a policy: single-axis maximum-velocity bursts with
sudden stops (6 trials), coupled diagonal commands (8 trials), and a
goal-reaching task driven by a proportional controller (1 trial) that serves
as the pass criterion for difficulty search.

The training-side machinery covers curriculum stages, the dynamic velocity
tracking precision adjustment, extreme command sampling (10% stationary, 20%
maximal combinations, 20% pivot turns when the linear part is zero), and
dynamic command sampling with the progress-preserving exclusion band.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class GoalError(ValueError):
    pass


@dataclass(frozen=True)
class CommandTriple:
    vx: float
    vy: float
    wz: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.vx, self.vy, self.wz)

    def linear_norm(self) -> float:
        return math.hypot(self.vx, self.vy)

    def is_stationary(self) -> bool:
        return self.vx == 0.0 and self.vy == 0.0


STOP_COMMAND = CommandTriple(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CommandLimits:
    vx: float
    vy: float
    wz: float

    def clip(self, vx: float, vy: float, wz: float) -> CommandTriple:
        return CommandTriple(
            max(-self.vx, min(self.vx, vx)),
            max(-self.vy, min(self.vy, vy)),
            max(-self.wz, min(self.wz, wz)),
        )

    def capped(self, cap: float | None) -> "CommandLimits":
        if cap is None:
            return self
        return CommandLimits(min(self.vx, cap), min(self.vy, cap), min(self.wz, cap))


# Per-terrain command limits and maximum velocity-tracking coefficients.
_TERRAIN_ROWS: dict[str, tuple[float, CommandLimits]] = {
    "flat": (1.0 / 4.0, CommandLimits(2.0, 1.0, 2.0)),
    "wave": (5.0 / 12.0, CommandLimits(1.5, 1.0, 1.5)),
    "slope": (1.0 / 4.0, CommandLimits(1.5, 1.0, 1.5)),
    "stairs_up": (1.0 / 2.0, CommandLimits(1.0, 1.0, 1.5)),
    "stairs_down": (1.0 / 2.0, CommandLimits(1.0, 1.0, 1.5)),
    "obstacle": (3.0 / 4.0, CommandLimits(1.0, 1.0, 1.5)),
}

_KIND_TO_ROW = {
    "flat": "flat",
    "wave": "wave",
    "slope_up": "slope",
    "slope_down": "slope",
    "rough_slope": "slope",
    "stairs_up": "stairs_up",
    "stairs_down": "stairs_down",
    "obstacle": "obstacle",
}

# Velocity band for the dynamic sigma adjustment.
LINEAR_VELOCITY_BAND = (0.5, 1.5)
ANGULAR_VELOCITY_BAND = (1.0, 2.0)
BASE_SIGMA = 0.25


def command_limits_for(terrain_kind: str, cap: float | None = None) -> CommandLimits:
    row = _KIND_TO_ROW.get(terrain_kind)
    if row is None:
        raise GoalError(f"no command limits for terrain kind {terrain_kind!r}")
    return _TERRAIN_ROWS[row][1].capped(cap)


def sigma_max_for(terrain_kind: str) -> float:
    row = _KIND_TO_ROW.get(terrain_kind)
    if row is None:
        raise GoalError(f"no tracking coefficient for terrain kind {terrain_kind!r}")
    return _TERRAIN_ROWS[row][0]


GOAL_KINDS = ("max_velocity", "diagonal_velocity", "target_position")
MAX_TRIALS = {"max_velocity": 6, "diagonal_velocity": 8, "target_position": 1}


@dataclass(frozen=True)
class TargetDirective:
    """Waypoint for the goal-reaching task, expressed in the spawn frame.

    The trial succeeds the moment horizontal displacement reaches
    ``min_displacement_m`` without a fall (half the tile length by default),
    so it ends as soon as the outcome is decided.
    """

    offset_x: float = 4.5
    offset_y: float = 0.0
    kp: float = 1.0
    kp_heading: float = 1.5
    tolerance: float = 0.3
    min_displacement_m: float = 4.0


@dataclass(frozen=True)
class Segment:
    trial: int
    duration_s: float
    command: CommandTriple | None  # None means the target controller drives
    is_stop: bool = False


@dataclass(frozen=True)
class GoalSchedule:
    kind: str
    segments: tuple[Segment, ...]
    limits: CommandLimits
    target: TargetDirective | None = None

    @property
    def max_trials(self) -> int:
        return MAX_TRIALS[self.kind]

    @property
    def num_trials(self) -> int:
        return len({s.trial for s in self.segments})

    @property
    def total_duration(self) -> float:
        return sum(s.duration_s for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "limits": {"vx": self.limits.vx, "vy": self.limits.vy, "wz": self.limits.wz},
            "target": None
            if self.target is None
            else {
                "offset_x": self.target.offset_x,
                "offset_y": self.target.offset_y,
                "kp": self.target.kp,
                "kp_heading": self.target.kp_heading,
                "tolerance": self.target.tolerance,
                "min_displacement_m": self.target.min_displacement_m,
            },
            "segments": [
                {
                    "trial": s.trial,
                    "duration_s": s.duration_s,
                    "command": None if s.command is None else list(s.command.as_tuple()),
                    "is_stop": s.is_stop,
                }
                for s in self.segments
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "GoalSchedule":
        limits = CommandLimits(**doc["limits"])
        target = None if doc.get("target") is None else TargetDirective(**doc["target"])
        segments = tuple(
            Segment(
                trial=s["trial"],
                duration_s=s["duration_s"],
                command=None if s["command"] is None else CommandTriple(*s["command"]),
                is_stop=s.get("is_stop", False),
            )
            for s in doc["segments"]
        )
        return GoalSchedule(kind=doc["kind"], segments=segments, limits=limits, target=target)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "GoalSchedule":
        return GoalSchedule.from_dict(json.loads(Path(path).read_text()))


def build_goal(
    kind: str,
    terrain_kind: str = "flat",
    limits: CommandLimits | None = None,
    command_s: float = 3.0,
    stop_s: float = 1.0,
    target: TargetDirective | None = None,
    target_timeout_s: float = 20.0,
) -> GoalSchedule:
    """Assemble the command schedule for one goal kind.

    max_velocity probes each command axis in both directions with a sudden
    stop after every burst; diagonal_velocity runs all sign combinations of
    (vx, wz) and (vx, vy) at maximum magnitude; target_position hands control
    to the proportional controller for a single trial.
    """
    if kind not in GOAL_KINDS:
        raise GoalError(f"unknown goal kind {kind!r}")
    limits = limits or command_limits_for(terrain_kind)

    if kind == "max_velocity":
        bursts = [
            CommandTriple(limits.vx, 0.0, 0.0),
            CommandTriple(-limits.vx, 0.0, 0.0),
            CommandTriple(0.0, limits.vy, 0.0),
            CommandTriple(0.0, -limits.vy, 0.0),
            CommandTriple(0.0, 0.0, limits.wz),
            CommandTriple(0.0, 0.0, -limits.wz),
        ]
    elif kind == "diagonal_velocity":
        bursts = [
            CommandTriple(sx * limits.vx, 0.0, sw * limits.wz)
            for sx in (1.0, -1.0)
            for sw in (1.0, -1.0)
        ] + [
            CommandTriple(sx * limits.vx, sy * limits.vy, 0.0)
            for sx in (1.0, -1.0)
            for sy in (1.0, -1.0)
        ]
    else:
        directive = target or TargetDirective()
        return GoalSchedule(
            kind=kind,
            segments=(Segment(trial=0, duration_s=target_timeout_s, command=None),),
            limits=limits,
            target=directive,
        )

    segments: list[Segment] = []
    for i, cmd in enumerate(bursts):
        segments.append(Segment(trial=i, duration_s=command_s, command=cmd))
        segments.append(Segment(trial=i, duration_s=stop_s, command=STOP_COMMAND, is_stop=True))
    return GoalSchedule(kind=kind, segments=tuple(segments), limits=limits)


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def target_position_controller(
    position_xy: tuple[float, float],
    yaw: float,
    target_xy: tuple[float, float],
    limits: CommandLimits,
    kp: float = 1.0,
    kp_heading: float = 1.5,
) -> CommandTriple:
    """Proportional drive toward a waypoint.

    Body-frame position error scaled by kp and clipped to the command limits;
    the heading error drives the yaw-rate command and attenuates the linear
    command so the robot turns before it sprints.
    """
    ex = target_xy[0] - position_xy[0]
    ey = target_xy[1] - position_xy[1]
    dist = math.hypot(ex, ey)
    if dist < 1e-9:
        return STOP_COMMAND
    heading_err = _wrap_angle(math.atan2(ey, ex) - yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    bx = ex * c + ey * s
    by = -ex * s + ey * c
    gate = max(0.0, math.cos(heading_err))
    return limits.clip(kp * bx * gate, kp * by * gate, kp_heading * heading_err)


def success_check(trace, threshold_m: float = 4.0) -> bool:
    """Goal-reaching pass: final horizontal displacement over the threshold
    (half the tile length by default) with no fall."""
    if trace.fell():
        return False
    return trace.displacement() >= threshold_m


def dynamic_sigma(
    sigma: float,
    sigma_max: float,
    v: float,
    v_band: tuple[float, float] = LINEAR_VELOCITY_BAND,
    level: float = 0.0,
    verbatim: bool = False,
) -> float:
    """Adaptive velocity-tracking precision.

    The intermediate coefficient interpolates from sigma at the band floor to
    sigma_max at the band ceiling; the difficulty level blends it in through
    min(e^(L/10) - 1, 1), so level 0 always returns sigma unchanged.

    ``verbatim=True`` reproduces the printed middle branch
    sigma*(v - v_min) + sigma_max*(v_max - v), which contradicts its own
    boundary cases; the default uses the boundary-consistent normalized form.
    """
    if v < 0:
        raise GoalError("command magnitude must be non-negative")
    if not 0.0 <= level <= 10.0:
        raise GoalError("difficulty level must be in [0, 10]")
    v_min, v_max = v_band
    if v_max <= v_min:
        raise GoalError("degenerate velocity band")
    if v < v_min:
        sigma_vel = sigma
    elif v >= v_max:
        sigma_vel = sigma_max
    elif verbatim:
        sigma_vel = sigma * (v - v_min) + sigma_max * (v_max - v)
    else:
        sigma_vel = (sigma * (v_max - v) + sigma_max * (v - v_min)) / (v_max - v_min)
    blend = min(math.exp(level / 10.0) - 1.0, 1.0)
    return sigma + blend * (sigma_vel - sigma)


@dataclass(frozen=True)
class CurriculumStage:
    name: str
    step_range: tuple[float, float]
    limits: CommandLimits


CURRICULUM_STAGES = (
    CurriculumStage("initial", (0, 2e4), CommandLimits(0.5, 0.5, 1.0)),
    CurriculumStage("intermediate", (2e4, 5e4), CommandLimits(1.0, 1.0, 1.5)),
    CurriculumStage("advanced", (5e4, math.inf), CommandLimits(2.0, 1.0, 2.0)),
)


def stage_for_step(step: int) -> CurriculumStage:
    for stage in CURRICULUM_STAGES:
        if stage.step_range[0] <= step < stage.step_range[1]:
            return stage
    return CURRICULUM_STAGES[-1]


def exclusion_speed(
    prior_linear: list[tuple[float, float]],
    t_resample: float,
    t_episode: float,
    limits: CommandLimits,
    distance_target: float = 5.0,
) -> float:
    """Lower bound v* on the next linear command magnitude.

    Derived from the remaining distance needed to satisfy the level-up rule
    given the displacement the prior commands already cover; clipped to
    [0, min axis limit].
    """
    n_r = len(prior_linear)
    remaining = t_episode - n_r * t_resample
    cap = min(abs(limits.vx), abs(limits.vy))
    if remaining <= 0:
        raise GoalError("episode time exhausted")
    sum_vx = sum(v[0] for v in prior_linear)
    sum_vy = sum(v[1] for v in prior_linear)
    covered = math.hypot(sum_vx, sum_vy) * t_resample
    v_star = (distance_target - covered) / remaining
    return max(0.0, min(cap, v_star))


def stationary_duration(
    prior_linear: list[tuple[float, float]],
    t_resample: float,
    t_episode: float,
    limits: CommandLimits,
    distance_target: float = 5.0,
) -> float:
    """Budgeted duration of a stationary command, clipped to [0, t_resample]."""
    n_r = len(prior_linear)
    sum_vx = sum(v[0] for v in prior_linear)
    sum_vy = sum(v[1] for v in prior_linear)
    covered = math.hypot(sum_vx, sum_vy) * t_resample
    reserve = (distance_target - covered) / (0.8 * max(limits.vx, limits.vy))
    t_zero = t_episode - n_r * t_resample - reserve
    return max(0.0, min(t_resample, t_zero))


@dataclass(frozen=True)
class SampledCommand:
    command: CommandTriple
    duration_s: float
    stationary: bool
    extreme: bool


def sample_training_command(
    rng: np.random.Generator,
    limits: CommandLimits,
    prior_linear: list[tuple[float, float]] | None = None,
    t_resample: float = 5.0,
    t_episode: float = 20.0,
    p_stationary: float = 0.10,
    p_extreme: float = 0.20,
    p_pivot: float = 0.20,
    distance_target: float = 5.0,
) -> SampledCommand:
    """Draw the next training command.

    Stationary (zero linear part) with probability 0.10, where one in five
    stationary draws becomes a maximum-rate pivot turn; a maximal-magnitude
    sign combination across all three axes with probability 0.20; otherwise
    uniform with both linear components excluded from (-v*, v*).
    """
    prior_linear = prior_linear or []
    u = rng.random()
    if u < p_stationary:
        wz = 0.0
        if rng.random() < p_pivot:
            wz = limits.wz if rng.random() < 0.5 else -limits.wz
        duration = stationary_duration(prior_linear, t_resample, t_episode, limits, distance_target)
        return SampledCommand(CommandTriple(0.0, 0.0, wz), duration, True, False)
    if u < p_stationary + p_extreme:
        sx = 1.0 if rng.random() < 0.5 else -1.0
        sy = 1.0 if rng.random() < 0.5 else -1.0
        sw = 1.0 if rng.random() < 0.5 else -1.0
        cmd = CommandTriple(sx * limits.vx, sy * limits.vy, sw * limits.wz)
        return SampledCommand(cmd, t_resample, False, True)
    v_star = exclusion_speed(prior_linear, t_resample, t_episode, limits, distance_target)

    def outside_band(axis_limit: float) -> float:
        lo = min(v_star, axis_limit)
        mag = rng.uniform(lo, axis_limit) if axis_limit > lo else axis_limit
        return mag if rng.random() < 0.5 else -mag

    cmd = CommandTriple(
        outside_band(limits.vx),
        outside_band(limits.vy),
        rng.uniform(-limits.wz, limits.wz),
    )
    return SampledCommand(cmd, t_resample, False, False)
