"""Robot description: joint names, default pose, limits.

A description is a small JSON document shared verbatim with external
simulator backends during the wire-protocol handshake.  The built-in default
models a 12-DoF quadruped with three joints per leg in the order
FL, FR, RL, RR and (hip, thigh, calf) within each leg.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUM_JOINTS = 12
NUM_FEET = 4
LEG_NAMES = ("FL", "FR", "RL", "RR")

HIP_INDICES = (0, 3, 6, 9)
THIGH_INDICES = (1, 4, 7, 10)
CALF_INDICES = (2, 5, 8, 11)


class RobotDescriptionError(ValueError):
    pass


@dataclass(frozen=True)
class RobotDescription:
    name: str
    joint_names: tuple[str, ...]
    default_pose: np.ndarray
    lower_limits: np.ndarray
    upper_limits: np.ndarray
    torque_limits: np.ndarray
    soft_limit_fraction: float = 0.95
    explicit_soft_lower: np.ndarray | None = field(default=None, repr=False)
    explicit_soft_upper: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        if n != NUM_JOINTS:
            raise RobotDescriptionError(f"expected {NUM_JOINTS} joints, got {n}")
        for arr, label in (
            (self.default_pose, "default_pose"),
            (self.lower_limits, "lower_limits"),
            (self.upper_limits, "upper_limits"),
            (self.torque_limits, "torque_limits"),
        ):
            if arr.shape != (NUM_JOINTS,):
                raise RobotDescriptionError(f"{label} must have shape ({NUM_JOINTS},)")
        if np.any(self.lower_limits >= self.upper_limits):
            raise RobotDescriptionError("lower limits must be below upper limits")
        if not 0.0 < self.soft_limit_fraction <= 1.0:
            raise RobotDescriptionError("soft_limit_fraction must be in (0, 1]")

    @property
    def soft_lower(self) -> np.ndarray:
        if self.explicit_soft_lower is not None:
            return self.explicit_soft_lower
        mid = (self.lower_limits + self.upper_limits) / 2.0
        half = (self.upper_limits - self.lower_limits) / 2.0
        return mid - self.soft_limit_fraction * half

    @property
    def soft_upper(self) -> np.ndarray:
        if self.explicit_soft_upper is not None:
            return self.explicit_soft_upper
        mid = (self.lower_limits + self.upper_limits) / 2.0
        half = (self.upper_limits - self.lower_limits) / 2.0
        return mid + self.soft_limit_fraction * half

    def to_dict(self) -> dict:
        joints = []
        for i, name in enumerate(self.joint_names):
            joints.append(
                {
                    "name": name,
                    "default": float(self.default_pose[i]),
                    "lower": float(self.lower_limits[i]),
                    "upper": float(self.upper_limits[i]),
                    "torque_limit": float(self.torque_limits[i]),
                }
            )
        doc: dict = {
            "name": self.name,
            "soft_limit_fraction": self.soft_limit_fraction,
            "joints": joints,
        }
        if self.explicit_soft_lower is not None:
            doc["soft_lower"] = [float(v) for v in self.explicit_soft_lower]
        if self.explicit_soft_upper is not None:
            doc["soft_upper"] = [float(v) for v in self.explicit_soft_upper]
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "RobotDescription":
        try:
            joints = doc["joints"]
            names = tuple(j["name"] for j in joints)
            default = np.array([j["default"] for j in joints], dtype=np.float64)
            lower = np.array([j["lower"] for j in joints], dtype=np.float64)
            upper = np.array([j["upper"] for j in joints], dtype=np.float64)
            torque = np.array([j["torque_limit"] for j in joints], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise RobotDescriptionError(f"malformed robot description: {exc}") from exc
        soft_lower = doc.get("soft_lower")
        soft_upper = doc.get("soft_upper")
        return RobotDescription(
            name=doc.get("name", "robot"),
            joint_names=names,
            default_pose=default,
            lower_limits=lower,
            upper_limits=upper,
            torque_limits=torque,
            soft_limit_fraction=float(doc.get("soft_limit_fraction", 0.95)),
            explicit_soft_lower=None if soft_lower is None else np.asarray(soft_lower, dtype=np.float64),
            explicit_soft_upper=None if soft_upper is None else np.asarray(soft_upper, dtype=np.float64),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path) -> "RobotDescription":
        return RobotDescription.from_dict(json.loads(Path(path).read_text()))


def default_description() -> RobotDescription:
    """12-DoF quadruped with conventional hip/thigh/calf limits."""
    joint_names = tuple(f"{leg}_{part}" for leg in LEG_NAMES for part in ("hip", "thigh", "calf"))
    default = np.tile([0.1, 0.8, -1.5], 4)
    default[[3, 9]] = -0.1  # right hips mirror left
    lower = np.tile([-0.9, -1.0, -2.72], 4)
    upper = np.tile([0.9, 3.4, -0.84], 4)
    torque = np.full(NUM_JOINTS, 25.0)
    return RobotDescription(
        name="quad12",
        joint_names=joint_names,
        default_pose=default,
        lower_limits=lower,
        upper_limits=upper,
        torque_limits=torque,
    )
