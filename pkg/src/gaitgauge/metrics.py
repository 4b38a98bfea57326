"""Proprioceptive metrics over episode traces.

Six raw error statistics are normalized by fixed scale constants, clipped to
[0, 1], and flipped with f(x) = 1 - x so that higher is always better.  Joint
soft-limit violations and lateral gravity projection are intrinsically in
[0, 1] and need no scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .robot import NUM_FEET, NUM_JOINTS, RobotDescription, default_description
from .sim import quat_rotate_inverse_batch

METRIC_NAMES = ("lin_tracking", "ang_tracking", "dof_power", "dof_limits", "orientation", "smoothness")

TRACE_FIELD_ORDER = (
    "t",
    "cmd",
    "pos",
    "quat",
    "lin_vel",
    "ang_vel",
    "q",
    "dq",
    "tau",
    "action",
    "contacts",
    "g_proj",
    "fall",
    "segment",
    "trial",
    "collisions",
)


class MetricError(ValueError):
    pass


@dataclass
class EpisodeTrace:
    """Time-indexed record of one episode at the control rate.

    ``lin_vel`` is world-frame, ``ang_vel`` body-frame; ``trial`` groups steps
    into goal trials and ``segment`` indexes schedule segments.
    """

    time: np.ndarray
    command: np.ndarray
    base_pos: np.ndarray
    base_quat: np.ndarray
    lin_vel: np.ndarray
    ang_vel: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    tau: np.ndarray
    action: np.ndarray
    contacts: np.ndarray
    g_proj: np.ndarray
    fall: np.ndarray
    segment: np.ndarray
    trial: np.ndarray
    collisions: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.time.shape[0]

    def validate(self) -> None:
        n = len(self)
        if n == 0:
            raise MetricError("empty trace")
        if n > 1 and np.any(np.diff(self.time) <= 0):
            raise MetricError("trace time must be strictly increasing")
        widths = {
            "command": 3,
            "base_pos": 3,
            "base_quat": 4,
            "lin_vel": 3,
            "ang_vel": 3,
            "q": NUM_JOINTS,
            "dq": NUM_JOINTS,
            "tau": NUM_JOINTS,
            "action": NUM_JOINTS,
            "contacts": NUM_FEET,
            "g_proj": 3,
        }
        for name, width in widths.items():
            arr = getattr(self, name)
            if arr.shape != (n, width):
                raise MetricError(f"{name} has shape {arr.shape}, expected ({n}, {width})")
        for name, arr in (("time", self.time), ("command", self.command), ("tau", self.tau)):
            if not np.all(np.isfinite(arr)):
                raise MetricError(f"non-finite samples in {name}")

    def body_lin_vel(self) -> np.ndarray:
        return quat_rotate_inverse_batch(self.base_quat, self.lin_vel)

    def select(self, mask: np.ndarray) -> "EpisodeTrace":
        return EpisodeTrace(
            time=self.time[mask],
            command=self.command[mask],
            base_pos=self.base_pos[mask],
            base_quat=self.base_quat[mask],
            lin_vel=self.lin_vel[mask],
            ang_vel=self.ang_vel[mask],
            q=self.q[mask],
            dq=self.dq[mask],
            tau=self.tau[mask],
            action=self.action[mask],
            contacts=self.contacts[mask],
            g_proj=self.g_proj[mask],
            fall=self.fall[mask],
            segment=self.segment[mask],
            trial=self.trial[mask],
            collisions=self.collisions[mask],
            metadata=dict(self.metadata),
        )

    def fell(self) -> bool:
        return bool(np.any(self.fall))

    def displacement(self) -> float:
        """Horizontal distance between the first and last base positions."""
        delta = self.base_pos[-1, :2] - self.base_pos[0, :2]
        return float(np.hypot(*delta))

    # -- persistence -----------------------------------------------------

    def to_ndjson(self, path: str | Path) -> None:
        """One JSON object per control step, fields in TRACE_FIELD_ORDER."""
        with open(path, "w") as f:
            if self.metadata:
                f.write(json.dumps({"metadata": self.metadata}, sort_keys=True) + "\n")
            for i in range(len(self)):
                rec = {
                    "t": float(self.time[i]),
                    "cmd": self.command[i].tolist(),
                    "pos": self.base_pos[i].tolist(),
                    "quat": self.base_quat[i].tolist(),
                    "lin_vel": self.lin_vel[i].tolist(),
                    "ang_vel": self.ang_vel[i].tolist(),
                    "q": self.q[i].tolist(),
                    "dq": self.dq[i].tolist(),
                    "tau": self.tau[i].tolist(),
                    "action": self.action[i].tolist(),
                    "contacts": [bool(v) for v in self.contacts[i]],
                    "g_proj": self.g_proj[i].tolist(),
                    "fall": bool(self.fall[i]),
                    "segment": int(self.segment[i]),
                    "trial": int(self.trial[i]),
                    "collisions": int(self.collisions[i]),
                }
                f.write(json.dumps(rec, sort_keys=True) + "\n")

    @staticmethod
    def from_ndjson(path: str | Path) -> "EpisodeTrace":
        metadata: dict = {}
        rows: list[dict] = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                doc = json.loads(line)
                if "metadata" in doc and "t" not in doc:
                    metadata = doc["metadata"]
                else:
                    rows.append(doc)
        if not rows:
            raise MetricError(f"no records in {path}")
        rec = TraceRecorder(capacity=len(rows))
        for r in rows:
            rec.append(
                t=r["t"],
                command=np.asarray(r["cmd"], dtype=np.float64),
                base_pos=np.asarray(r["pos"], dtype=np.float64),
                base_quat=np.asarray(r["quat"], dtype=np.float64),
                lin_vel=np.asarray(r["lin_vel"], dtype=np.float64),
                ang_vel=np.asarray(r["ang_vel"], dtype=np.float64),
                q=np.asarray(r["q"], dtype=np.float64),
                dq=np.asarray(r["dq"], dtype=np.float64),
                tau=np.asarray(r["tau"], dtype=np.float64),
                action=np.asarray(r["action"], dtype=np.float64),
                contacts=np.asarray(r["contacts"], dtype=bool),
                g_proj=np.asarray(r["g_proj"], dtype=np.float64),
                fall=r["fall"],
                segment=r["segment"],
                trial=r["trial"],
                collisions=r["collisions"],
            )
        trace = rec.finish()
        trace.metadata = metadata
        return trace

    def to_npz(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            time=self.time,
            command=self.command,
            base_pos=self.base_pos,
            base_quat=self.base_quat,
            lin_vel=self.lin_vel,
            ang_vel=self.ang_vel,
            q=self.q,
            dq=self.dq,
            tau=self.tau,
            action=self.action,
            contacts=self.contacts,
            g_proj=self.g_proj,
            fall=self.fall,
            segment=self.segment,
            trial=self.trial,
            collisions=self.collisions,
            metadata=json.dumps(self.metadata, sort_keys=True),
        )

    @staticmethod
    def from_npz(path: str | Path) -> "EpisodeTrace":
        data = np.load(path, allow_pickle=False)
        return EpisodeTrace(
            time=data["time"],
            command=data["command"],
            base_pos=data["base_pos"],
            base_quat=data["base_quat"],
            lin_vel=data["lin_vel"],
            ang_vel=data["ang_vel"],
            q=data["q"],
            dq=data["dq"],
            tau=data["tau"],
            action=data["action"],
            contacts=data["contacts"],
            g_proj=data["g_proj"],
            fall=data["fall"],
            segment=data["segment"],
            trial=data["trial"],
            collisions=data["collisions"],
            metadata=json.loads(str(data["metadata"])),
        )


class TraceRecorder:
    """Preallocated trace builder for the episode loop."""

    def __init__(self, capacity: int) -> None:
        self.n = 0
        self.time = np.zeros(capacity)
        self.command = np.zeros((capacity, 3))
        self.base_pos = np.zeros((capacity, 3))
        self.base_quat = np.zeros((capacity, 4))
        self.lin_vel = np.zeros((capacity, 3))
        self.ang_vel = np.zeros((capacity, 3))
        self.q = np.zeros((capacity, NUM_JOINTS))
        self.dq = np.zeros((capacity, NUM_JOINTS))
        self.tau = np.zeros((capacity, NUM_JOINTS))
        self.action = np.zeros((capacity, NUM_JOINTS))
        self.contacts = np.zeros((capacity, NUM_FEET), dtype=bool)
        self.g_proj = np.zeros((capacity, 3))
        self.fall = np.zeros(capacity, dtype=bool)
        self.segment = np.zeros(capacity, dtype=np.int64)
        self.trial = np.zeros(capacity, dtype=np.int64)
        self.collisions = np.zeros(capacity, dtype=np.int64)

    def append(self, *, t, command, base_pos, base_quat, lin_vel, ang_vel, q, dq, tau, action, contacts, g_proj, fall, segment, trial, collisions) -> None:
        i = self.n
        if i >= self.time.shape[0]:
            raise MetricError("trace recorder capacity exceeded")
        self.time[i] = t
        self.command[i] = command
        self.base_pos[i] = base_pos
        self.base_quat[i] = base_quat
        self.lin_vel[i] = lin_vel
        self.ang_vel[i] = ang_vel
        self.q[i] = q
        self.dq[i] = dq
        self.tau[i] = tau
        self.action[i] = action
        self.contacts[i] = contacts
        self.g_proj[i] = g_proj
        self.fall[i] = fall
        self.segment[i] = segment
        self.trial[i] = trial
        self.collisions[i] = collisions
        self.n += 1

    def finish(self, metadata: dict | None = None) -> EpisodeTrace:
        n = self.n
        return EpisodeTrace(
            time=self.time[:n].copy(),
            command=self.command[:n].copy(),
            base_pos=self.base_pos[:n].copy(),
            base_quat=self.base_quat[:n].copy(),
            lin_vel=self.lin_vel[:n].copy(),
            ang_vel=self.ang_vel[:n].copy(),
            q=self.q[:n].copy(),
            dq=self.dq[:n].copy(),
            tau=self.tau[:n].copy(),
            action=self.action[:n].copy(),
            contacts=self.contacts[:n].copy(),
            g_proj=self.g_proj[:n].copy(),
            fall=self.fall[:n].copy(),
            segment=self.segment[:n].copy(),
            trial=self.trial[:n].copy(),
            collisions=self.collisions[:n].copy(),
            metadata=metadata or {},
        )


@dataclass(frozen=True)
class MetricVector:
    lin_tracking: float
    ang_tracking: float
    dof_power: float
    dof_limits: float
    orientation: float
    smoothness: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in METRIC_NAMES])

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in METRIC_NAMES}

    @staticmethod
    def from_array(values: np.ndarray) -> "MetricVector":
        return MetricVector(*(float(v) for v in values))

    def __post_init__(self) -> None:
        for n in METRIC_NAMES:
            v = getattr(self, n)
            if not 0.0 <= v <= 1.0:
                raise MetricError(f"metric {n}={v} outside [0, 1]")


@dataclass(frozen=True)
class NormalizationConfig:
    """Scale constants dividing the raw error statistics.

    Tracking scales default to the per-terrain command limits; power and
    smoothness scales are engine defaults recorded into every report.
    """

    c_lin: float = 2.0
    c_ang: float = 2.0
    c_power: float = 400.0
    c_smooth: float = 20.0

    def __post_init__(self) -> None:
        for name in ("c_lin", "c_ang", "c_power", "c_smooth"):
            if getattr(self, name) <= 0:
                raise MetricError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {"c_lin": self.c_lin, "c_ang": self.c_ang, "c_power": self.c_power, "c_smooth": self.c_smooth}


def raw_metrics(trace: EpisodeTrace, robot: RobotDescription | None = None) -> dict[str, float]:
    """The six raw error statistics before normalization."""
    trace.validate()
    robot = robot or default_description()
    v_body = trace.body_lin_vel()
    lin_err = float(np.mean(np.linalg.norm(trace.command[:, :2] - v_body[:, :2], axis=1)))
    ang_err = float(np.mean(np.abs(trace.command[:, 2] - trace.ang_vel[:, 2])))
    power = float(np.mean(np.sum(np.abs(trace.tau * trace.dq), axis=1)))
    outside = (trace.q < robot.soft_lower) | (trace.q > robot.soft_upper)
    limits = float(np.mean(outside))
    orient = float(np.mean(np.abs(trace.g_proj[:, 1])))
    if len(trace) > 1:
        smooth = float(np.mean(np.linalg.norm(np.diff(trace.tau, axis=0), axis=1)))
    else:
        smooth = 0.0
    return {
        "lin_tracking": lin_err,
        "ang_tracking": ang_err,
        "dof_power": power,
        "dof_limits": limits,
        "orientation": orient,
        "smoothness": smooth,
    }


def compute_metrics(
    trace: EpisodeTrace,
    norm: NormalizationConfig | None = None,
    robot: RobotDescription | None = None,
) -> MetricVector:
    """Normalize raw errors to [0, 1] scores via m = 1 - clip(raw / c)."""
    norm = norm or NormalizationConfig()
    raw = raw_metrics(trace, robot)
    scales = {
        "lin_tracking": norm.c_lin,
        "ang_tracking": norm.c_ang,
        "dof_power": norm.c_power,
        "dof_limits": 1.0,
        "orientation": 1.0,
        "smoothness": norm.c_smooth,
    }
    scores = {}
    for name in METRIC_NAMES:
        x = min(1.0, max(0.0, raw[name] / scales[name]))
        scores[name] = 1.0 - x
    return MetricVector(**scores)


def trial_metrics(
    trace: EpisodeTrace,
    norm: NormalizationConfig | None = None,
    robot: RobotDescription | None = None,
) -> list[MetricVector]:
    """Per-trial metric vectors, in trial-id order."""
    trace.validate()
    out = []
    for trial_id in np.unique(trace.trial):
        if trial_id < 0:
            continue
        sub = trace.select(trace.trial == trial_id)
        out.append(compute_metrics(sub, norm, robot))
    if not out:
        raise MetricError("trace contains no trials")
    return out


AGGREGATION_MODES = ("worst50", "mean", "top25")


def aggregate_goal_scores(vectors: list[MetricVector], mode: str = "worst50") -> MetricVector:
    """Componentwise aggregation across trials of one goal.

    worst50 averages the lowest ceil(n/2) values, top25 the highest
    ceil(n/4); both reduce to the identity for a single trial.
    """
    if not vectors:
        raise MetricError("need at least one trial")
    if mode not in AGGREGATION_MODES:
        raise MetricError(f"unknown aggregation mode {mode!r}")
    stacked = np.stack([v.as_array() for v in vectors])
    n = stacked.shape[0]
    ordered = np.sort(stacked, axis=0)
    if mode == "mean":
        agg = stacked.mean(axis=0)
    elif mode == "worst50":
        k = -(-n // 2)
        agg = ordered[:k].mean(axis=0)
    else:
        k = -(-n // 4)
        agg = ordered[n - k :].mean(axis=0)
    return MetricVector.from_array(agg)


def average_over_seeds(vectors: list[MetricVector], expected_count: int = 3) -> MetricVector:
    """Componentwise arithmetic mean across the configured seed count."""
    if len(vectors) != expected_count:
        raise MetricError(f"expected {expected_count} per-seed vectors, got {len(vectors)}")
    stacked = np.stack([v.as_array() for v in vectors])
    return MetricVector.from_array(stacked.mean(axis=0))
