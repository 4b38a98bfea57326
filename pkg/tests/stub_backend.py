"""In-process stub backend for wire-protocol tests.

No physics: the base stands at the reference height over the decoded
heightfield while joints follow their targets through a first-order lag.
Malformed frames are answered with ERROR (code bad_frame) and the connection
stays alive; an optional step budget ends the episode with a DONE frame.
"""

from __future__ import annotations

import base64
import json
import math
import socket
import struct
import threading

import numpy as np

from gaitgauge.bridge import PROTOCOL_VERSION, encode_frame
from gaitgauge.robot import NUM_JOINTS
from gaitgauge.terrain import Heightfield


class StubState:
    def __init__(self, hello: dict) -> None:
        terrain = Heightfield.from_binary(base64.b64decode(hello["terrain"]["data"]))
        sx, sy = hello["terrain"]["spawn"]
        x0, y0, x1, y1 = terrain.bounds
        support = terrain.height_at(min(max(sx, x0), x1), min(max(sy, y0), y1))
        sim = hello["sim"]
        self.kp = sim["kp"]
        self.kd = sim["kd"]
        self.dt = 1.0 / sim["control_hz"]
        self.base_height = sim["base_height"]
        self.default_pose = np.array([j["default"] for j in hello["robot"]["joints"]])
        self.q = self.default_pose.copy()
        self.dq = np.zeros(NUM_JOINTS)
        self.tau = np.zeros(NUM_JOINTS)
        self.pos = [sx, sy, support + self.base_height]
        self.decay = math.exp(-self.dt / 0.08)

    def step(self, action: list[float]) -> None:
        target = self.default_pose + np.asarray(action)
        q_prev = self.q
        self.q = target + (self.q - target) * self.decay
        self.dq = (self.q - q_prev) / self.dt
        self.tau = self.kp * (target - self.q) - self.kd * self.dq

    def wire_state(self) -> dict:
        return {
            "pos": list(self.pos),
            "quat": [1.0, 0.0, 0.0, 0.0],
            "lin_vel": [0.0, 0.0, 0.0],
            "ang_vel": [0.0, 0.0, 0.0],
            "q": self.q.tolist(),
            "dq": self.dq.tolist(),
            "tau": self.tau.tolist(),
            "contacts": [True, True, True, True],
            "g_proj": [0.0, 0.0, -1.0],
        }


def _read_exactly(conn: socket.socket, n: int) -> bytes | None:
    data = b""
    while len(data) < n:
        chunk = conn.recv(n - len(data))
        if not chunk:
            return None
        data += chunk
    return data


def _serve_connection(conn: socket.socket, done_after: int | None, done_reason: str, corrupt_state: bool) -> None:
    state: StubState | None = None
    steps = 0
    while True:
        header = _read_exactly(conn, 4)
        if header is None:
            return
        (length,) = struct.unpack(">I", header)
        payload = _read_exactly(conn, length)
        if payload is None:
            return
        try:
            message = json.loads(payload.decode("utf-8"))
            if not isinstance(message, dict) or "type" not in message:
                raise ValueError("missing type")
        except (ValueError, UnicodeDecodeError):
            conn.sendall(encode_frame({"type": "ERROR", "code": "bad_frame", "message": "unparseable frame"}))
            continue
        kind = message["type"]
        if kind == "HELLO":
            state = StubState(message)
            reply = {"type": "RESET_ACK", "protocol_version": PROTOCOL_VERSION, "state": state.wire_state()}
            conn.sendall(encode_frame(reply))
        elif kind == "STEP":
            if state is None:
                conn.sendall(encode_frame({"type": "ERROR", "code": "no_hello", "message": "STEP before HELLO"}))
                continue
            steps += 1
            if done_after is not None and steps > done_after:
                conn.sendall(encode_frame({"type": "DONE", "reason": done_reason}))
                continue
            state.step(message["action"])
            wire = state.wire_state()
            if corrupt_state:
                wire["quat"] = [2.0, 0.0, 0.0, 0.0]
            conn.sendall(encode_frame({"type": "STATE", "state": wire, "done": False}))
        else:
            conn.sendall(encode_frame({"type": "ERROR", "code": "bad_type", "message": f"unexpected {kind}"}))


class StubBackendServer:
    """TCP stub serving one connection per episode, many episodes in turn."""

    def __init__(self, done_after: int | None = None, done_reason: str = "fall", corrupt_state: bool = False) -> None:
        self.done_after = done_after
        self.done_reason = done_reason
        self.corrupt_state = corrupt_state
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(8)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    @property
    def address(self) -> str:
        return f"127.0.0.1:{self.port}"

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self._sock.settimeout(0.2)
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                try:
                    _serve_connection(conn, self.done_after, self.done_reason, self.corrupt_state)
                except (ConnectionError, OSError):
                    pass

    def close(self) -> None:
        self._stop.set()
        self._sock.close()
        self._thread.join(timeout=2)
