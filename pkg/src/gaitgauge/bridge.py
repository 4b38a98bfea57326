"""Engine side of the wire protocol for external simulator backends.

Frames are length-prefixed JSON: a 4-byte big-endian payload length followed
by a UTF-8 JSON object.  After HELLO the exchange is strict request/response:
every STEP is answered by exactly one STATE, DONE, or ERROR frame.

The engine forwards terrain (compact binary heightfield, base64), the robot
description, domain randomization, and the PD parameters in HELLO; physics-
side effects (latency, friction, gains) are the backend's job, while
observation noise, goal scheduling, fall detection, and metrics stay in the
engine, identically to the reference backend.  Any STATE violating the robot
state invariants (non-unit quaternion, wrong widths, non-finite values) is
rejected with a protocol error, never silently normalized.

One connection serves one episode: reset opens a fresh connection, close
tears it down.
"""

from __future__ import annotations

import base64
import json
import shlex
import socket
import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from .robot import RobotDescription, default_description
from .sim import DomainRandomization, RobotState, SimConfig, SimError
from .terrain import Heightfield, spawn_point

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024


class BridgeProtocolError(RuntimeError):
    pass


class EpisodeDone(Exception):
    """Backend ended the episode; carries the termination reason."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message, sort_keys=True).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise BridgeProtocolError("frame too large")
    return struct.pack(">I", len(payload)) + payload


def read_frame(read_exactly) -> dict:
    """Read one frame via a callable returning exactly n bytes."""
    header = read_exactly(4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise BridgeProtocolError("frame too large")
    payload = read_exactly(length)
    try:
        message = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BridgeProtocolError(f"bad frame: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise BridgeProtocolError("bad frame: missing type")
    return message


def state_to_wire(state: RobotState) -> dict:
    return {
        "pos": state.base_pos.tolist(),
        "quat": state.base_quat.tolist(),
        "lin_vel": state.lin_vel.tolist(),
        "ang_vel": state.ang_vel.tolist(),
        "q": state.q.tolist(),
        "dq": state.dq.tolist(),
        "tau": state.tau.tolist(),
        "contacts": [bool(c) for c in state.contacts],
        "g_proj": state.g_proj.tolist(),
    }


def state_from_wire(doc: dict) -> RobotState:
    try:
        state = RobotState(
            base_pos=np.asarray(doc["pos"], dtype=np.float64),
            base_quat=np.asarray(doc["quat"], dtype=np.float64),
            lin_vel=np.asarray(doc["lin_vel"], dtype=np.float64),
            ang_vel=np.asarray(doc["ang_vel"], dtype=np.float64),
            q=np.asarray(doc["q"], dtype=np.float64),
            dq=np.asarray(doc["dq"], dtype=np.float64),
            tau=np.asarray(doc["tau"], dtype=np.float64),
            contacts=np.asarray(doc["contacts"], dtype=bool),
            g_proj=np.asarray(doc["g_proj"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise BridgeProtocolError(f"malformed state frame: {exc}") from exc
    try:
        state.validate()
    except SimError as exc:
        raise BridgeProtocolError(f"state violates invariants: {exc}") from exc
    return state


def hello_message(
    terrain: Heightfield,
    dr: DomainRandomization,
    seed: int,
    sim_config: SimConfig,
    robot: RobotDescription,
) -> dict:
    sx, sy = spawn_point(terrain)
    return {
        "type": "HELLO",
        "protocol_version": PROTOCOL_VERSION,
        "robot": robot.to_dict(),
        "terrain": {
            "encoding": "rghf+base64",
            "data": base64.b64encode(terrain.to_binary()).decode("ascii"),
            "origin": list(terrain.origin),
            "spawn": [sx, sy],
            "kind": None if terrain.spec is None else terrain.spec.kind,
            "difficulty": None if terrain.spec is None else terrain.spec.difficulty,
        },
        "dr": dr.to_dict(),
        "seed": int(seed),
        "sim": {
            "control_hz": sim_config.control_hz,
            "physics_hz": sim_config.physics_hz,
            "kp": sim_config.kp,
            "kd": sim_config.kd,
            "action_clip": sim_config.action_clip,
            "base_height": sim_config.base_height,
        },
    }


@dataclass
class _Connection:
    send: object
    recv: object
    close: object


class BridgeBackend:
    """Simulator backend speaking the wire protocol.

    Addresses: ``host:port`` for TCP, ``stdio:<command>`` to spawn the
    backend as a subprocess and frame over its stdin/stdout.
    """

    def __init__(
        self,
        address: str,
        sim_config: SimConfig | None = None,
        robot: RobotDescription | None = None,
        connect_timeout: float = 10.0,
    ) -> None:
        self.address = address
        self.config = sim_config or SimConfig()
        self.robot = robot or default_description()
        self.connect_timeout = connect_timeout
        self._conn: _Connection | None = None
        self.done_reason: str | None = None

    # -- transport ---------------------------------------------------------

    def _connect(self) -> _Connection:
        if self.address.startswith("stdio:"):
            command = shlex.split(self.address[len("stdio:") :])
            proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

            def send(data: bytes) -> None:
                proc.stdin.write(data)
                proc.stdin.flush()

            def recv(n: int) -> bytes:
                data = proc.stdout.read(n)
                if data is None or len(data) != n:
                    raise BridgeProtocolError("backend closed the stream")
                return data

            def close() -> None:
                try:
                    proc.stdin.close()
                except OSError:
                    pass
                proc.terminate()
                proc.wait(timeout=5)

            return _Connection(send=send, recv=recv, close=close)

        host, _, port = self.address.rpartition(":")
        if not host or not port.isdigit():
            raise BridgeProtocolError(f"bad bridge address {self.address!r}")
        sock = socket.create_connection((host, int(port)), timeout=self.connect_timeout)
        sock.settimeout(self.connect_timeout)

        def send(data: bytes) -> None:
            sock.sendall(data)

        def recv(n: int) -> bytes:
            chunks = b""
            while len(chunks) < n:
                chunk = sock.recv(n - len(chunks))
                if not chunk:
                    raise BridgeProtocolError("backend closed the connection")
                chunks += chunk
            return chunks

        return _Connection(send=send, recv=recv, close=sock.close)

    def _roundtrip(self, message: dict) -> dict:
        assert self._conn is not None
        self._conn.send(encode_frame(message))
        reply = read_frame(self._conn.recv)
        if reply["type"] == "ERROR":
            raise BridgeProtocolError(f"backend error {reply.get('code')}: {reply.get('message')}")
        return reply

    # -- simulator contract -------------------------------------------------

    def reset(self, terrain: Heightfield, dr: DomainRandomization, seed: int) -> RobotState:
        self.close()
        self.done_reason = None
        self._conn = self._connect()
        hello = hello_message(terrain, dr, seed, self.config, self.robot)
        reply = self._roundtrip(hello)
        if reply["type"] != "RESET_ACK":
            raise BridgeProtocolError(f"expected RESET_ACK, got {reply['type']}")
        negotiated = reply.get("protocol_version", PROTOCOL_VERSION)
        if negotiated != PROTOCOL_VERSION:
            raise BridgeProtocolError(f"protocol version mismatch: {negotiated}")
        return state_from_wire(reply["state"])

    def step(self, action: np.ndarray) -> RobotState:
        if self._conn is None:
            raise BridgeProtocolError("step before reset")
        if self.done_reason is not None:
            raise EpisodeDone(self.done_reason)
        action = np.asarray(action, dtype=np.float64)
        if not np.all(np.isfinite(action)):
            raise BridgeProtocolError("non-finite action")
        reply = self._roundtrip({"type": "STEP", "action": action.tolist()})
        if reply["type"] == "DONE":
            self.done_reason = str(reply.get("reason", "done"))
            raise EpisodeDone(self.done_reason)
        if reply["type"] != "STATE":
            raise BridgeProtocolError(f"expected STATE, got {reply['type']}")
        return state_from_wire(reply["state"])

    def close(self) -> None:
        if self._conn is not None:
            try:
                self._conn.close()
            except Exception:  # noqa: BLE001 - teardown best effort
                pass
            self._conn = None
