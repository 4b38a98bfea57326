"""Run configuration: a JSON or TOML document with strict schema validation.

Unknown keys are rejected with a dotted pointer to the offending key, and
every default mirrors the published hyperparameters where one exists
(alpha = 0.09, beta = 0.19, sigma = 0.25, H = 5, kp = 20, kd = 0.5, 10
levels, 50/200 Hz).  Environment variables override scalar keys using the
documented prefix, e.g. ``GAITGAUGE_WORKERS=8`` or
``GAITGAUGE_SEEDS__ROOT=7`` (double underscore descends one level).
"""

from __future__ import annotations

import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .goals import GOAL_KINDS
from .pipelines import TERRAIN_SET, BackendSpec, EngineConfig, PolicySpec, default_dr_presets
from .robot import RobotDescription, default_description
from .scoring import ScoreWeights
from .sim import CapabilityProfile, DomainRandomization, NoiseConfig, ReferenceSimConfig, SimConfig, variant_presets

ENV_PREFIX = "GAITGAUGE_"

_TERRAIN_NAMES = tuple(name for name, _ in TERRAIN_SET)

_SCHEMA: dict[str, Any] = {
    "robot": (str, type(None)),
    "policy": {
        "kind": str,
        "name": str,
        "path": (str, type(None)),
    },
    "backend": {
        "kind": str,
        "address": (str, type(None)),
    },
    "terrains": list,
    "dr": {
        "preset": str,
        "custom": list,
    },
    "seeds": {
        "root": int,
        "metric": int,
        "pass": int,
    },
    "pass_threshold": (int, float),
    "goal_mode": str,
    "goals": list,
    "score": {
        "alpha": (int, float),
        "beta": (int, float),
        "exponents": list,
    },
    "normalization": {
        "c_power": (int, float),
        "c_smooth": (int, float),
    },
    "rewards": {
        "variant": str,
        "sigma": (int, float),
        "tracking_exp_verbatim": bool,
    },
    "command_cap": (int, float, type(None)),
    "sim": {
        "control_hz": int,
        "physics_hz": int,
        "kp": (int, float),
        "kd": (int, float),
        "action_clip": (int, float),
        "base_height": (int, float),
        "noise": {
            "enabled": bool,
            "ang_vel": (int, float),
            "gravity": (int, float),
            "joint_pos": (int, float),
            "joint_vel": (int, float),
        },
    },
    "reference": {
        "max_level": (int, dict),
        "deg_difficulty": (int, float),
        "deg_friction": (int, float),
        "deg_payload": (int, float),
    },
    "episode": {
        "command_s": (int, float),
        "stop_s": (int, float),
        "target_timeout_s": (int, float),
        "success_threshold_m": (int, float),
    },
    "workers": int,
    "output_dir": str,
}


def default_config() -> dict:
    return {
        "robot": None,
        "policy": {"kind": "scripted", "name": "trot_tracker", "path": None},
        "backend": {"kind": "reference", "address": None},
        "terrains": list(_TERRAIN_NAMES),
        "dr": {"preset": "friction9", "custom": []},
        "seeds": {"root": 0, "metric": 3, "pass": 5},
        "pass_threshold": 0.8,
        "goal_mode": "worst50",
        "goals": list(GOAL_KINDS),
        "score": {"alpha": 0.09, "beta": 0.19, "exponents": [2.0, 2.0, 1.0, 1.0, 1.0, 1.0]},
        "normalization": {"c_power": 400.0, "c_smooth": 20.0},
        "rewards": {"variant": "multi_terrain", "sigma": 0.25, "tracking_exp_verbatim": True},
        "command_cap": None,
        "sim": {
            "control_hz": 50,
            "physics_hz": 200,
            "kp": 20.0,
            "kd": 0.5,
            "action_clip": 4.8,
            "base_height": 0.38,
            "noise": {"enabled": True, "ang_vel": 0.05, "gravity": 0.025, "joint_pos": 0.01, "joint_vel": 1.5},
        },
        "reference": {"max_level": 10, "deg_difficulty": 0.30, "deg_friction": 0.30, "deg_payload": 0.02},
        "episode": {"command_s": 3.0, "stop_s": 1.0, "target_timeout_s": 20.0, "success_threshold_m": 4.0},
        "workers": 1,
        "output_dir": "runs",
    }


class ConfigError(ValueError):
    pass


def _validate(doc: Any, schema: Any, path: str) -> None:
    if isinstance(schema, dict):
        if not isinstance(doc, dict):
            raise ConfigError(f"{path or 'config'}: expected a table, got {type(doc).__name__}")
        for key, value in doc.items():
            child = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown config key: {child}")
            _validate(value, schema[key], child)
    else:
        expected = schema if isinstance(schema, tuple) else (schema,)
        if not isinstance(doc, expected) or (isinstance(doc, bool) and bool not in expected):
            names = "/".join(t.__name__ for t in expected)
            raise ConfigError(f"{path}: expected {names}, got {type(doc).__name__}")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in override.items():
        child = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {child}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, child)
        else:
            out[key] = value
    return out


def _apply_env_overrides(doc: dict, environ: dict[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX) :].lower().split("__")
        node = doc
        for part in dotted[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"environment override {name}: no table {part!r}")
            node = node[part]
        leaf = dotted[-1]
        if leaf not in node:
            raise ConfigError(f"environment override {name}: unknown key {'.'.join(dotted)}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[leaf] = value
    return doc


def load_config(path: str | Path | None = None, overrides: dict | None = None, use_env: bool = True) -> dict:
    """Defaults, then the config file, then explicit overrides, then the
    environment; validated at every stage."""
    doc = default_config()
    if path is not None:
        path = Path(path)
        if path.suffix == ".toml":
            loaded = tomllib.loads(path.read_text())
        elif path.suffix == ".json":
            loaded = json.loads(path.read_text())
        else:
            raise ConfigError(f"unsupported config format {path.suffix!r} (use .json or .toml)")
        doc = _merge(doc, loaded)
    if overrides:
        doc = _merge(doc, overrides)
    if use_env:
        doc = _apply_env_overrides(doc)
    _validate(doc, _SCHEMA, "")
    _semantic_checks(doc)
    return doc


def _semantic_checks(doc: dict) -> None:
    for terrain in doc["terrains"]:
        if terrain not in _TERRAIN_NAMES:
            raise ConfigError(f"terrains: unknown terrain {terrain!r} (choose from {_TERRAIN_NAMES})")
    for goal in doc["goals"]:
        if goal not in GOAL_KINDS:
            raise ConfigError(f"goals: unknown goal {goal!r}")
    if doc["goal_mode"] not in ("worst50", "mean", "top25"):
        raise ConfigError(f"goal_mode: unknown mode {doc['goal_mode']!r}")
    if doc["dr"]["preset"] not in ("friction9", "friction10", "variants", "custom"):
        raise ConfigError(f"dr.preset: unknown preset {doc['dr']['preset']!r}")
    if doc["policy"]["kind"] not in ("scripted", "moe"):
        raise ConfigError(f"policy.kind: must be scripted or moe, got {doc['policy']['kind']!r}")
    if doc["backend"]["kind"] not in ("reference", "bridge"):
        raise ConfigError(f"backend.kind: must be reference or bridge, got {doc['backend']['kind']!r}")
    if doc["backend"]["kind"] == "bridge" and not doc["backend"]["address"]:
        raise ConfigError("backend.address: required for the bridge backend")
    if not 0.0 < doc["pass_threshold"] <= 1.0:
        raise ConfigError("pass_threshold: must be in (0, 1]")
    if doc["workers"] < 1:
        raise ConfigError("workers: must be >= 1")
    if doc["seeds"]["metric"] < 1 or doc["seeds"]["pass"] < 1:
        raise ConfigError("seeds.metric and seeds.pass must be >= 1")
    if doc["rewards"]["variant"] not in ("multi_terrain", "high_speed"):
        raise ConfigError(f"rewards.variant: unknown variant {doc['rewards']['variant']!r}")
    if doc["rewards"]["sigma"] <= 0:
        raise ConfigError("rewards.sigma must be positive")


@dataclass(frozen=True)
class ResolvedRun:
    doc: dict
    engine: EngineConfig
    policy: PolicySpec
    backend: BackendSpec
    terrains: tuple[tuple[str, str], ...]
    dr_presets: tuple[tuple[str, DomainRandomization], ...]
    root_seed: int
    workers: int
    output_dir: Path

    def reward_config(self):
        from dataclasses import replace

        from .rewards import high_speed_config, multi_terrain_config

        section = self.doc["rewards"]
        base = high_speed_config() if section["variant"] == "high_speed" else multi_terrain_config()
        return replace(
            base, sigma=section["sigma"], tracking_exp_verbatim=section["tracking_exp_verbatim"]
        )


def resolve(doc: dict) -> ResolvedRun:
    """Turn a validated config document into engine objects."""
    robot = default_description() if doc["robot"] is None else RobotDescription.load(doc["robot"])

    noise = doc["sim"]["noise"]
    sim = SimConfig(
        control_hz=doc["sim"]["control_hz"],
        physics_hz=doc["sim"]["physics_hz"],
        kp=doc["sim"]["kp"],
        kd=doc["sim"]["kd"],
        action_clip=doc["sim"]["action_clip"],
        base_height=doc["sim"]["base_height"],
        noise=NoiseConfig(
            enabled=noise["enabled"],
            ang_vel=noise["ang_vel"],
            gravity=noise["gravity"],
            joint_pos=noise["joint_pos"],
            joint_vel=noise["joint_vel"],
        ),
    )
    max_level = doc["reference"]["max_level"]
    ref = ReferenceSimConfig(
        capability=CapabilityProfile(max_level=max_level),
        deg_difficulty=doc["reference"]["deg_difficulty"],
        deg_friction=doc["reference"]["deg_friction"],
        deg_payload=doc["reference"]["deg_payload"],
    )
    weights = ScoreWeights(
        metric_exponents=tuple(doc["score"]["exponents"]),
        alpha=doc["score"]["alpha"],
        beta=doc["score"]["beta"],
    )
    engine = EngineConfig(
        sim=sim,
        ref=ref,
        robot=robot,
        weights=weights,
        goals=tuple(doc["goals"]),
        goal_mode=doc["goal_mode"],
        metric_seeds=doc["seeds"]["metric"],
        pass_seeds=doc["seeds"]["pass"],
        pass_threshold=doc["pass_threshold"],
        command_cap=doc["command_cap"],
        success_threshold_m=doc["episode"]["success_threshold_m"],
        c_power=doc["normalization"]["c_power"],
        c_smooth=doc["normalization"]["c_smooth"],
        command_s=doc["episode"]["command_s"],
        stop_s=doc["episode"]["stop_s"],
        target_timeout_s=doc["episode"]["target_timeout_s"],
    )
    policy = PolicySpec(kind=doc["policy"]["kind"], name=doc["policy"]["name"], path=doc["policy"]["path"])
    backend = BackendSpec(kind=doc["backend"]["kind"], address=doc["backend"]["address"])
    terrains = tuple((name, kind) for name, kind in TERRAIN_SET if name in doc["terrains"])

    preset = doc["dr"]["preset"]
    if preset == "friction9":
        dr_presets = tuple(default_dr_presets(9))
    elif preset == "friction10":
        dr_presets = tuple(default_dr_presets(10))
    elif preset == "variants":
        dr_presets = tuple(default_dr_presets(9)) + tuple(variant_presets())
    else:
        custom = []
        for i, entry in enumerate(doc["dr"]["custom"]):
            if not isinstance(entry, dict) or "name" not in entry:
                raise ConfigError(f"dr.custom[{i}]: expected a table with a name")
            fields = {k: v for k, v in entry.items() if k != "name"}
            if "com_offset" in fields:
                fields["com_offset"] = tuple(fields["com_offset"])
            try:
                custom.append((entry["name"], DomainRandomization(**fields)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"dr.custom[{i}]: {exc}") from exc
        dr_presets = tuple(custom)
    if not dr_presets:
        raise ConfigError("dr: preset resolves to an empty randomization set")

    return ResolvedRun(
        doc=doc,
        engine=engine,
        policy=policy,
        backend=backend,
        terrains=terrains,
        dr_presets=dr_presets,
        root_seed=doc["seeds"]["root"],
        workers=doc["workers"],
        output_dir=Path(doc["output_dir"]),
    )
