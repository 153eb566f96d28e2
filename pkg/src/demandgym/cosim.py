"""Newline-delimited lockstep wire protocol between trainer and simulator.

The environment is the server; the trainer is the client. Every message is
one UTF-8 line of JSON with ``v`` (protocol version, always 1) and ``type``
first. The server greets with ``hello``, then strictly alternates
reset→obs→(act→obs)*, with ``done: true`` on an episode's final obs. See
``docs/protocol.md`` for the full grammar.
"""

from __future__ import annotations

import json
import socket
import sys
from datetime import date, datetime

import numpy as np

from . import problem
from .environment import DemandResponseEnv, EnvironmentError_, StepObs, \
    weekdays_between

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 30.0


class DecodeError(ValueError):
    """Line cannot be decoded into a protocol message."""


class ProtocolError(RuntimeError):
    """Peer violated the message grammar or reported an error."""


# ---------------------------------------------------------------------------
# codec
# ---------------------------------------------------------------------------

# canonical field order per message type (after v, type)
_FIELDS = {
    "hello": ("features", "action"),
    "reset": ("seed", "day"),
    "obs": ("t", "features", "cooling_w", "baseline_w", "done"),
    "act": ("action",),
    "error": ("code", "message"),
    "close": (),
}


def encode(msg: dict) -> str:
    """Canonical single-line encoding; raises DecodeError on a bad message."""
    mtype = msg.get("type")
    if mtype not in _FIELDS:
        raise DecodeError(f"unknown message type {mtype!r}")
    out = {"v": PROTOCOL_VERSION, "type": mtype}
    for name in _FIELDS[mtype]:
        if name not in msg:
            raise DecodeError(f"{mtype} message missing field {name!r}")
        out[name] = msg[name]
    line = json.dumps(out, separators=(",", ":"))
    if "\n" in line:
        raise DecodeError("encoded message must not contain newlines")
    return line


def decode(line: str) -> dict:
    """Parse one line; tolerant to extra fields, strict about required ones."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON at position {exc.pos}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise DecodeError("message must be a JSON object")
    v = doc.get("v")
    if v != PROTOCOL_VERSION:
        raise DecodeError(f"unsupported protocol version {v!r}")
    mtype = doc.get("type")
    if mtype not in _FIELDS:
        raise DecodeError(f"unknown message type {mtype!r}")
    out = {"type": mtype}
    for name in _FIELDS[mtype]:
        if name not in doc:
            raise DecodeError(f"{mtype} message missing field {name!r}")
        out[name] = doc[name]
    return out


def obs_message(obs: StepObs) -> dict:
    return {"type": "obs", "t": obs.t.isoformat(),
            "features": [float(x) for x in obs.features],
            "cooling_w": float(obs.cooling_w),
            "baseline_w": float(obs.baseline_w), "done": bool(obs.done)}


def hello_message(env) -> dict:
    spec = env.action_spec
    action = {"kind": spec.kind, "low": spec.low, "high": spec.high}
    if spec.kind == "discrete_delta":
        action["n_discrete"] = spec.n_discrete
    return {"type": "hello", "features": list(env.obs_spec.features),
            "action": action}


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------

def _validate_action(action, spec: problem.ActionSpec):
    if spec.kind == "discrete_delta":
        if not isinstance(action, int) or not 0 <= action < spec.n_discrete:
            raise ProtocolError(f"discrete action must be an index in "
                                f"[0, {spec.n_discrete}), got {action!r}")
        return action
    if not isinstance(action, (int, float)) or isinstance(action, bool):
        raise ProtocolError(f"continuous action must be a number, got {action!r}")
    a = float(action)
    if not np.isfinite(a) or not spec.low <= a <= spec.high:
        raise ProtocolError(f"action {a} outside [{spec.low}, {spec.high}]")
    return a


def serve_streams(env: DemandResponseEnv, rfile, wfile):
    """Drive one client session over text streams; returns on close/EOF."""

    def send(msg: dict):
        wfile.write(encode(msg) + "\n")
        wfile.flush()

    send(hello_message(env))
    has_episode = False
    for line in rfile:
        line = line.strip()
        if not line:
            continue
        try:
            msg = decode(line)
        except DecodeError as exc:
            send({"type": "error", "code": "bad_message", "message": str(exc)})
            return  # malformed line: error then connection close
        try:
            if msg["type"] == "close":
                return
            if msg["type"] == "reset":
                day = date.fromisoformat(str(msg["day"]))
                try:
                    index = env.episode_days.index(day)
                except ValueError:
                    raise ProtocolError(f"day {day} not a weekday of the period")
                send(obs_message(env.reset(index)))
                has_episode = True
            elif msg["type"] == "act":
                if not has_episode:
                    raise ProtocolError("act before reset")
                action = _validate_action(msg["action"], env.action_spec)
                send(obs_message(env.step(action)))
            else:
                raise ProtocolError(f"unexpected {msg['type']} from client")
        except ProtocolError as exc:
            send({"type": "error", "code": "bad_action"
                  if msg["type"] == "act" else "bad_request",
                  "message": str(exc)})
        except EnvironmentError_ as exc:
            send({"type": "error", "code": "env_failure", "message": str(exc)})


class EnvServer:
    """One-client TCP server around a builtin environment."""

    def __init__(self, env: DemandResponseEnv, host="127.0.0.1", port=0):
        self.env = env
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(1)
        self.host, self.port = self._sock.getsockname()

    def serve_one_client(self):
        conn, _ = self._sock.accept()
        try:
            with conn.makefile("r", encoding="utf-8") as rfile, \
                    conn.makefile("w", encoding="utf-8") as wfile:
                serve_streams(self.env, rfile, wfile)
        finally:
            conn.close()

    def close(self):
        self._sock.close()


def serve_env(env: DemandResponseEnv, endpoint: str):
    """Serve on `host:port` (or `stdio`) until the client closes."""
    if endpoint == "stdio":
        serve_streams(env, sys.stdin, sys.stdout)
        return
    host, _, port = endpoint.rpartition(":")
    server = EnvServer(env, host or "127.0.0.1", int(port))
    try:
        server.serve_one_client()
    finally:
        server.close()


# ---------------------------------------------------------------------------
# client
# ---------------------------------------------------------------------------

class RemoteEnv:
    """Client-side environment speaking the wire protocol.

    Exposes the same reset/step surface as DemandResponseEnv, so the
    trainer cannot tell a remote simulator from the builtin one. The
    baseline reference series for metrics is reconstructed locally from
    the run configuration.
    """

    def __init__(self, cfg, timeout_s: float = DEFAULT_TIMEOUT_S):
        from . import trainer as tr  # local import to avoid a module cycle

        self.obs_spec = problem.ObservationSpec.for_task(cfg.task)
        self.action_spec = tr.action_spec_for(cfg.algorithm)
        self.episode_days = weekdays_between(cfg.start_date, cfg.end_date)
        self.seed = cfg.seed
        weather = tr.load_weather(cfg)
        import demandgym.building_env as be
        self.baseline = be.run_baseline(cfg.building, weather, cfg.schedules,
                                        cfg.start_date, cfg.end_date)

        host, _, port = cfg.endpoint.rpartition(":")
        try:
            self._sock = socket.create_connection(
                (host or "127.0.0.1", int(port)), timeout=timeout_s)
        except OSError as exc:
            raise EnvironmentError_(f"cannot connect to {cfg.endpoint}: {exc}")
        self._sock.settimeout(timeout_s)
        self._rfile = self._sock.makefile("r", encoding="utf-8")
        self._wfile = self._sock.makefile("w", encoding="utf-8")

        hello = self._recv()
        if hello["type"] != "hello":
            raise EnvironmentError_(f"expected hello, got {hello['type']}")
        if tuple(hello["features"]) != self.obs_spec.features:
            raise EnvironmentError_(
                f"server observes {hello['features']}, config expects "
                f"{list(self.obs_spec.features)}")
        if hello["action"].get("kind") != self.action_spec.kind:
            raise EnvironmentError_(
                f"server action kind {hello['action'].get('kind')!r} != "
                f"{self.action_spec.kind!r}")

    @property
    def n_episodes(self) -> int:
        return len(self.episode_days)

    @property
    def feature_names(self) -> tuple:
        return self.obs_spec.features

    def _send(self, msg: dict):
        try:
            self._wfile.write(encode(msg) + "\n")
            self._wfile.flush()
        except OSError as exc:
            raise EnvironmentError_(f"connection lost: {exc}") from None

    def _recv(self) -> dict:
        try:
            line = self._rfile.readline()
        except socket.timeout:
            raise EnvironmentError_("timeout waiting for simulator reply") from None
        except OSError as exc:
            raise EnvironmentError_(f"connection lost: {exc}") from None
        if not line:
            raise EnvironmentError_("simulator closed the connection")
        try:
            return decode(line)
        except DecodeError as exc:
            raise EnvironmentError_(f"bad message from simulator: {exc}") from None

    def _recv_obs(self) -> StepObs:
        msg = self._recv()
        if msg["type"] == "error":
            raise EnvironmentError_(
                f"simulator error {msg['code']}: {msg['message']}")
        if msg["type"] != "obs":
            raise EnvironmentError_(f"expected obs, got {msg['type']}")
        feats = np.asarray(msg["features"], dtype=np.float64)
        if feats.shape != (self.obs_spec.dim,):
            raise EnvironmentError_(
                f"obs carries {feats.size} features, expected {self.obs_spec.dim}")
        return StepObs(datetime.fromisoformat(msg["t"]), feats,
                       float(msg["cooling_w"]), float(msg["baseline_w"]),
                       bool(msg["done"]))

    def reset(self, episode_index: int) -> StepObs:
        if not 0 <= episode_index < self.n_episodes:
            raise EnvironmentError_(f"episode index {episode_index} out of range")
        self._send({"type": "reset", "seed": self.seed,
                    "day": self.episode_days[episode_index].isoformat()})
        return self._recv_obs()

    def step(self, action) -> StepObs:
        if self.action_spec.kind == "discrete_delta":
            action = int(action)
        else:
            action = float(np.clip(action, self.action_spec.low,
                                   self.action_spec.high))
        self._send({"type": "act", "action": action})
        return self._recv_obs()

    def close(self):
        try:
            self._send({"type": "close"})
        except EnvironmentError_:
            pass
        self._sock.close()


def remote_env(cfg, timeout_s: float = DEFAULT_TIMEOUT_S) -> RemoteEnv:
    return RemoteEnv(cfg, timeout_s=timeout_s)
