"""Policies under test: an MoE encoder + action head over an observation
history window, scripted baselines with known metric outcomes, and latent
analysis (CSV dumps, 2-D PCA).

The weight container is a self-describing binary (magic "RGPW"), so the
engine stays free of deep-learning framework dependencies: every dimension is
read from the header and any compatible exported policy loads.
"""

from __future__ import annotations

import binascii
import csv
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .robot import CALF_INDICES, NUM_JOINTS, THIGH_INDICES
from .sim import _VX_BASIS, _VY_BASIS, _WZ_BASIS, OBSERVATION_DIM, TROT_PATTERN

_THIGH_TROT = np.zeros(NUM_JOINTS)
_CALF_TROT = np.zeros(NUM_JOINTS)
for _leg, _sign in enumerate(TROT_PATTERN):
    _THIGH_TROT[THIGH_INDICES[_leg]] = _sign
    _CALF_TROT[CALF_INDICES[_leg]] = _sign

WEIGHTS_MAGIC = b"RGPW"
WEIGHTS_VERSION = 1

DEFAULT_EXPERTS = 4
DEFAULT_HISTORY = 5
DEFAULT_HIDDEN = (256, 256)
DEFAULT_LATENT = 32


class PolicyError(RuntimeError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / np.sum(e)


def _elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


_ACTIVATIONS = {
    "elu": _elu,
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
}


@dataclass
class Mlp:
    """Dense feed-forward net; the last layer is linear."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    activation: str = "elu"

    def __post_init__(self) -> None:
        if self.activation not in _ACTIVATIONS:
            raise PolicyError(f"unknown activation {self.activation!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        act = _ACTIVATIONS[self.activation]
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i < len(self.layers) - 1:
                x = act(x)
        return x

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]


def _random_mlp(rng: np.random.Generator, dims: list[int], activation: str) -> Mlp:
    layers = []
    for d_in, d_out in zip(dims, dims[1:]):
        scale = 1.0 / math.sqrt(d_in)
        layers.append((rng.normal(0.0, scale, (d_in, d_out)), rng.normal(0.0, 0.01, d_out)))
    return Mlp(layers=layers, activation=activation)


@dataclass
class MoEPolicy:
    """Gating network + K experts + action head.

    Experts and the gate all consume the flattened observation history
    (oldest first); the head consumes the mixed latent plus the current
    observation.
    """

    experts: list[Mlp]
    gate: Mlp
    head: Mlp
    history: int = DEFAULT_HISTORY
    obs_dim: int = OBSERVATION_DIM

    def __post_init__(self) -> None:
        in_dim = self.history * self.obs_dim
        if self.gate.input_dim != in_dim:
            raise PolicyError(f"gate input dim {self.gate.input_dim} != H*obs {in_dim}")
        if self.gate.output_dim != self.num_experts:
            raise PolicyError("gate output dim must equal the number of experts")
        latent = self.experts[0].output_dim
        for k, e in enumerate(self.experts):
            if e.input_dim != in_dim:
                raise PolicyError(f"expert {k} input dim {e.input_dim} != H*obs {in_dim}")
            if e.output_dim != latent:
                raise PolicyError("all experts must share one latent dimension")
        if self.head.input_dim != latent + self.obs_dim:
            raise PolicyError("head input dim must be latent + obs")

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    @property
    def latent_dim(self) -> int:
        return self.experts[0].output_dim

    @property
    def action_dim(self) -> int:
        return self.head.output_dim

    def forward(self, history: "ObservationHistory | np.ndarray") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mix the experts: returns (action, latent, gate weights)."""
        if isinstance(history, ObservationHistory):
            flat = history.flat()
            current = history.latest()
        else:
            flat = np.asarray(history, dtype=np.float64).reshape(-1)
            current = flat[-self.obs_dim :]
        if flat.shape != (self.history * self.obs_dim,):
            raise PolicyError(
                f"history has {flat.size} values, expected {self.history * self.obs_dim}"
            )
        if not np.all(np.isfinite(flat)):
            raise PolicyError("non-finite observation history")
        weights = softmax(self.gate(flat))
        latent = np.zeros(self.latent_dim)
        for w_k, expert in zip(weights, self.experts):
            latent += w_k * expert(flat)
        action = self.head(np.concatenate([latent, current]))
        return action, latent, weights

    # -- container -------------------------------------------------------

    def _named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out: list[tuple[str, np.ndarray]] = []
        for k, expert in enumerate(self.experts):
            for i, (w, b) in enumerate(expert.layers):
                out.append((f"expert_{k}.w{i}", w))
                out.append((f"expert_{k}.b{i}", b))
        for i, (w, b) in enumerate(self.gate.layers):
            out.append((f"gate.w{i}", w))
            out.append((f"gate.b{i}", b))
        for i, (w, b) in enumerate(self.head.layers):
            out.append((f"head.w{i}", w))
            out.append((f"head.b{i}", b))
        return out

    def to_bytes(self) -> bytes:
        tensors = self._named_tensors()
        blob = b"".join(t.astype("<f4").tobytes(order="C") for _, t in tensors)
        header = {
            "arch": {
                "num_experts": self.num_experts,
                "history": self.history,
                "obs_dim": self.obs_dim,
                "latent_dim": self.latent_dim,
                "action_dim": self.action_dim,
                "activation": self.experts[0].activation,
                "expert_layers": [w.shape[1] for w, _ in self.experts[0].layers],
                "gate_layers": [w.shape[1] for w, _ in self.gate.layers],
                "head_layers": [w.shape[1] for w, _ in self.head.layers],
            },
            "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
            "crc32": binascii.crc32(blob) & 0xFFFFFFFF,
        }
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        return (
            WEIGHTS_MAGIC
            + struct.pack("<HI", WEIGHTS_VERSION, len(header_bytes))
            + header_bytes
            + blob
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @staticmethod
    def from_bytes(data: bytes) -> "MoEPolicy":
        if data[:4] != WEIGHTS_MAGIC:
            raise PolicyError("bad policy weights magic")
        version, header_len = struct.unpack_from("<HI", data, 4)
        if version != WEIGHTS_VERSION:
            raise PolicyError(f"unsupported weights version {version}")
        header_start = 4 + struct.calcsize("<HI")
        header = json.loads(data[header_start : header_start + header_len])
        blob = data[header_start + header_len :]
        if binascii.crc32(blob) & 0xFFFFFFFF != header["crc32"]:
            raise PolicyError("weights checksum mismatch")
        tensors: dict[str, np.ndarray] = {}
        offset = 0
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            if arr.size != count:
                raise PolicyError("truncated weights payload")
            tensors[entry["name"]] = arr.astype(np.float64).reshape(shape)
            offset += count * 4
        arch = header["arch"]
        activation = arch["activation"]

        def build(prefix: str, n_layers: int) -> Mlp:
            layers = []
            for i in range(n_layers):
                try:
                    layers.append((tensors[f"{prefix}.w{i}"], tensors[f"{prefix}.b{i}"]))
                except KeyError as exc:
                    raise PolicyError(f"missing tensor {exc} in weights file") from exc
            return Mlp(layers=layers, activation=activation)

        n_expert_layers = len(arch["expert_layers"])
        experts = [build(f"expert_{k}", n_expert_layers) for k in range(arch["num_experts"])]
        gate = build("gate", len(arch["gate_layers"]))
        head = build("head", len(arch["head_layers"]))
        return MoEPolicy(experts=experts, gate=gate, head=head, history=arch["history"], obs_dim=arch["obs_dim"])

    @staticmethod
    def load(path: str | Path) -> "MoEPolicy":
        return MoEPolicy.from_bytes(Path(path).read_bytes())

    @staticmethod
    def random(
        seed: int = 0,
        num_experts: int = DEFAULT_EXPERTS,
        history: int = DEFAULT_HISTORY,
        obs_dim: int = OBSERVATION_DIM,
        hidden: tuple[int, ...] = DEFAULT_HIDDEN,
        latent_dim: int = DEFAULT_LATENT,
        action_dim: int = NUM_JOINTS,
        activation: str = "elu",
    ) -> "MoEPolicy":
        rng = np.random.Generator(np.random.PCG64(seed))
        in_dim = history * obs_dim
        experts = [
            _random_mlp(rng, [in_dim, *hidden, latent_dim], activation) for _ in range(num_experts)
        ]
        gate = _random_mlp(rng, [in_dim, *hidden, num_experts], activation)
        head = _random_mlp(rng, [latent_dim + obs_dim, *hidden, action_dim], activation)
        return MoEPolicy(experts=experts, gate=gate, head=head, history=history, obs_dim=obs_dim)

    def describe(self) -> dict:
        return {
            "num_experts": self.num_experts,
            "history": self.history,
            "obs_dim": self.obs_dim,
            "latent_dim": self.latent_dim,
            "action_dim": self.action_dim,
            "activation": self.experts[0].activation,
            "parameters": int(sum(w.size + b.size for m in [*self.experts, self.gate, self.head] for w, b in m.layers)),
        }


class ObservationHistory:
    """Ring buffer of the last H observations, pre-filled at episode start."""

    def __init__(self, history: int = DEFAULT_HISTORY, obs_dim: int = OBSERVATION_DIM) -> None:
        self.history = history
        self.obs_dim = obs_dim
        self._buf: np.ndarray | None = None

    def reset(self, first_obs: np.ndarray) -> None:
        first_obs = np.asarray(first_obs, dtype=np.float64)
        self._buf = np.tile(first_obs, (self.history, 1))

    def push(self, obs: np.ndarray) -> None:
        if self._buf is None:
            self.reset(obs)
            return
        self._buf = np.roll(self._buf, -1, axis=0)
        self._buf[-1] = obs

    def flat(self) -> np.ndarray:
        if self._buf is None:
            raise PolicyError("history is empty; call reset first")
        return self._buf.reshape(-1)

    def latest(self) -> np.ndarray:
        if self._buf is None:
            raise PolicyError("history is empty; call reset first")
        return self._buf[-1]

    def __len__(self) -> int:
        return 0 if self._buf is None else self.history


def load_balance_diagnostic(gate_batches: np.ndarray) -> float:
    """Sum of squared deviations of mean gate weights from uniform.

    Zero exactly when the per-expert means are 1/K; permutation-invariant in
    the samples.
    """
    w = np.asarray(gate_batches, dtype=np.float64)
    if w.ndim == 1:
        w = w[None, :]
    if w.shape[0] < 1:
        raise PolicyError("need at least one gate sample")
    row_sums = w.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(w < -1e-12):
        raise PolicyError("gate rows must lie on the probability simplex")
    k = w.shape[1]
    mean = w.mean(axis=0)
    return float(np.sum((mean - 1.0 / k) ** 2))


def pca_project(latents: np.ndarray) -> np.ndarray:
    """Project N x D latents onto the top-2 principal axes.

    Deterministic sign convention: the first nonzero loading of each axis is
    positive.  Zero-variance input projects to zeros.
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise PolicyError("need an N x D array with N >= 2")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    out = np.zeros((x.shape[0], 2))
    for axis in range(min(2, x.shape[1])):
        vec = eigvecs[:, order[axis]]
        if eigvals[order[axis]] <= 1e-15:
            continue
        nonzero = np.nonzero(np.abs(vec) > 1e-12)[0]
        if nonzero.size and vec[nonzero[0]] < 0:
            vec = -vec
        out[:, axis] = centered @ vec
    return out


@dataclass
class LatentRecord:
    timestamp: float
    terrain_id: str
    command_id: str
    gate: np.ndarray
    latent: np.ndarray


def dump_latents(records: list[LatentRecord], path: str | Path, num_experts: int, latent_dim: int) -> None:
    """CSV rows of (timestamp, terrain, command, gate weights, latent)."""
    header = (
        ["timestamp", "terrain_id", "command_id"]
        + [f"w_{k + 1}" for k in range(num_experts)]
        + [f"z_{i + 1}" for i in range(latent_dim)]
    )
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for rec in records:
            writer.writerow(
                [format(rec.timestamp, ".6f"), rec.terrain_id, rec.command_id]
                + [format(v, ".9g") for v in rec.gate]
                + [format(v, ".9g") for v in rec.latent]
            )


def load_latents_csv(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read back latent columns (z_*) and terrain labels from a dump."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        z_cols = [i for i, name in enumerate(header) if name.startswith("z_")]
        terrain_col = header.index("terrain_id")
        latents = []
        labels = []
        for row in reader:
            latents.append([float(row[i]) for i in z_cols])
            labels.append(row[terrain_col])
    if not latents:
        return np.zeros((0, len(z_cols))), []
    return np.asarray(latents), labels


class Policy(Protocol):
    """Per-episode controller: observation in, joint-offset action out."""

    def reset(self, seed: int) -> None: ...

    def act(self, obs: np.ndarray) -> np.ndarray: ...


class MoEPolicyRunner:
    """Stateful wrapper running an MoEPolicy over its history window."""

    def __init__(self, policy: MoEPolicy, record_latents: bool = False) -> None:
        self.policy = policy
        self.record_latents = record_latents
        self.history = ObservationHistory(policy.history, policy.obs_dim)
        self.last_gate: np.ndarray | None = None
        self.last_latent: np.ndarray | None = None
        self.latent_log: list[tuple[np.ndarray, np.ndarray]] = []

    def reset(self, seed: int) -> None:
        self.history = ObservationHistory(self.policy.history, self.policy.obs_dim)
        self.latent_log = []

    def act(self, obs: np.ndarray) -> np.ndarray:
        self.history.push(obs)
        action, latent, gate = self.policy.forward(self.history)
        self.last_gate = gate
        self.last_latent = latent
        if self.record_latents:
            self.latent_log.append((gate.copy(), latent.copy()))
        return action


class StandPolicy:
    """Zero actions: the robot holds its default pose."""

    def reset(self, seed: int) -> None:
        pass

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.zeros(NUM_JOINTS)


class TrotTracker:
    """Feed-forward command tracker for the reference backend.

    Encodes the observed command through the intent map and superimposes a
    diagonal-pair oscillation that the decode cannot see, so the synthesized
    gait does not disturb tracking.
    """

    def __init__(self, gait_frequency_hz: float = 1.8, osc_amplitude: float = 0.12, control_hz: int = 50) -> None:
        self.gait_frequency_hz = gait_frequency_hz
        self.osc_amplitude = osc_amplitude
        self.control_dt = 1.0 / control_hz
        self._t = 0.0

    def reset(self, seed: int) -> None:
        self._t = 0.0

    def act(self, obs: np.ndarray) -> np.ndarray:
        vx, vy, wz = float(obs[30]), float(obs[31]), float(obs[32])
        effort = min(1.0, abs(vx) / 1.5 + abs(vy) / 1.0 + abs(wz) / 2.0)
        amp = self.osc_amplitude * effort
        phase = 2 * math.pi * self.gait_frequency_hz * self._t
        action = vx * _VX_BASIS
        action += vy * _VY_BASIS
        action += wz * _WZ_BASIS
        action += (amp * math.sin(phase)) * _THIGH_TROT
        action += (0.8 * amp * math.cos(phase)) * _CALF_TROT
        self._t += self.control_dt
        return action


class FaultyPolicy(TrotTracker):
    """Trot tracker spoiled with torque chatter and soft-limit violations."""

    def __init__(self, chatter: float = 0.6, limit_push: float = 2.7, **kwargs) -> None:
        super().__init__(**kwargs)
        self.chatter = chatter
        self.limit_push = limit_push
        self._rng = np.random.Generator(np.random.PCG64(0))
        self._step = 0

    def reset(self, seed: int) -> None:
        super().reset(seed)
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xBAD])))
        self._step = 0

    def act(self, obs: np.ndarray) -> np.ndarray:
        action = super().act(obs)
        flip = 1.0 if self._step % 2 == 0 else -1.0
        action += flip * self.chatter * self._rng.uniform(0.5, 1.0, NUM_JOINTS)
        # Drive the thighs past their soft limit band.
        for i in THIGH_INDICES:
            action[i] += self.limit_push
        self._step += 1
        return action


def scripted_policy(kind: str, **kwargs) -> Policy:
    if kind == "stand":
        return StandPolicy()
    if kind == "trot_tracker":
        return TrotTracker(**kwargs)
    if kind == "faulty":
        return FaultyPolicy(**kwargs)
    raise PolicyError(f"unknown scripted policy {kind!r}")
