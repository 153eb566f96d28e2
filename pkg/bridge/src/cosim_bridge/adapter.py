"""Simulator-side lockstep server for the co-simulation protocol.

``run_adapter`` turns any step callable into a protocol-conforming
environment server: it greets with ``hello``, then answers ``reset`` and
``act`` with ``obs`` messages until the client closes. Error handling
follows the grammar: malformed lines get ``bad_message`` and end the
session; bad requests and bad actions get their error code and the
session survives; a step callable that raises gets ``env_failure`` and
the session ends cleanly.
"""

from __future__ import annotations

import socket
import sys
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from typing import Callable, Sequence

from .protocol import decode, encode, DecodeError, is_finite_number


class AdapterError(RuntimeError):
    """Configuration or startup failure of the adapter."""


class _RequestError(RuntimeError):
    """Client request that violates the session contract."""


@dataclass
class AdapterConfig:
    """Binding between the wire protocol and a user-supplied simulator.

    ``make_state(seed, day)`` builds fresh per-episode simulator state.
    ``step_fn(state, action)`` advances one control interval and returns
    ``(features, cooling_w, baseline_w, done)``; it is called with
    ``action=None`` once per episode to produce the reset observation.
    """

    endpoint: str
    features: Sequence[str]
    action: dict  # {"kind", "low", "high"[, "n_discrete"]}
    episode_length: int
    make_state: Callable[[int, date], object]
    step_fn: Callable[[object, object], tuple]
    start_time: time = field(default=time(8, 0))
    step_minutes: int = 10

    def validate(self):
        if self.episode_length <= 0:
            raise AdapterError("episode_length must be positive")
        kind = self.action.get("kind")
        if kind not in ("discrete_delta", "continuous_delta"):
            raise AdapterError(f"unsupported action kind {kind!r}")
        # declared features must match what the step callable emits
        state = self.make_state(0, date(1970, 1, 1))
        feats, cooling_w, baseline_w, done = self.step_fn(state, None)
        if len(feats) != len(self.features):
            raise AdapterError(
                f"step callable emits {len(feats)} features, "
                f"config declares {len(self.features)}")
        if not all(is_finite_number(float(x)) for x in feats):
            raise AdapterError("step callable emitted non-finite features")
        float(cooling_w), float(baseline_w), bool(done)


def _hello(cfg: AdapterConfig) -> dict:
    action = {"kind": cfg.action["kind"],
              "low": cfg.action.get("low", -0.5),
              "high": cfg.action.get("high", 0.5)}
    if cfg.action["kind"] == "discrete_delta":
        action["n_discrete"] = cfg.action.get("n_discrete", 3)
    return {"type": "hello", "features": list(cfg.features), "action": action}


def _check_action(action, spec: dict):
    if spec["kind"] == "discrete_delta":
        n = spec.get("n_discrete", 3)
        if not isinstance(action, int) or isinstance(action, bool) \
                or not 0 <= action < n:
            raise _RequestError(
                f"discrete action must be an index in [0, {n}), got {action!r}")
        return action
    if not is_finite_number(action):
        raise _RequestError(f"continuous action must be a number, got {action!r}")
    low, high = spec.get("low", -0.5), spec.get("high", 0.5)
    if not low <= float(action) <= high:
        raise _RequestError(f"action {action} outside [{low}, {high}]")
    return float(action)


class _Session:
    """Per-connection lockstep state machine."""

    def __init__(self, cfg: AdapterConfig):
        self.cfg = cfg
        self.state = None
        self.t = None
        self.n_acts = 0
        self.done = False

    def obs_from_step(self, action) -> dict:
        feats, cooling_w, baseline_w, done = self.cfg.step_fn(self.state, action)
        if bool(done) != (self.n_acts >= self.cfg.episode_length):
            raise _RequestError(
                f"simulator signalled done={bool(done)} at step {self.n_acts}, "
                f"episode length is {self.cfg.episode_length}")
        self.done = bool(done)
        return {"type": "obs", "t": self.t.isoformat(),
                "features": [float(x) for x in feats],
                "cooling_w": float(cooling_w),
                "baseline_w": float(baseline_w), "done": self.done}

    def handle_reset(self, msg) -> dict:
        seed, day = msg["seed"], msg["day"]
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise _RequestError(f"seed must be an integer, got {seed!r}")
        try:
            day = date.fromisoformat(str(day))
        except ValueError:
            raise _RequestError(f"day {msg['day']!r} is not an ISO date")
        self.state = self.cfg.make_state(seed, day)
        self.t = datetime.combine(day, self.cfg.start_time)
        self.n_acts = 0
        self.done = False
        return self.obs_from_step(None)

    def handle_act(self, msg) -> dict:
        if self.state is None:
            raise _RequestError("act before reset")
        if self.done:
            raise _RequestError("act after the episode ended")
        action = _check_action(msg["action"], self.cfg.action)
        self.n_acts += 1
        self.t += timedelta(minutes=self.cfg.step_minutes)
        return self.obs_from_step(action)


def serve_streams(cfg: AdapterConfig, rfile, wfile):
    """Drive one client session over text streams; returns on close/EOF."""

    def send(msg: dict):
        wfile.write(encode(msg) + "\n")
        wfile.flush()

    session = _Session(cfg)
    send(_hello(cfg))
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
                send(session.handle_reset(msg))
            elif msg["type"] == "act":
                send(session.handle_act(msg))
            else:
                raise _RequestError(f"unexpected {msg['type']} from client")
        except _RequestError as exc:
            send({"type": "error", "code": "bad_action"
                  if msg["type"] == "act" else "bad_request",
                  "message": str(exc)})
        except Exception as exc:  # simulator failure: report, end cleanly
            send({"type": "error", "code": "env_failure", "message": str(exc)})
            return


def run_adapter(cfg: AdapterConfig):
    """Validate the binding, then serve one training session."""
    cfg.validate()
    if cfg.endpoint == "stdio":
        serve_streams(cfg, sys.stdin, sys.stdout)
        return
    host, _, port = cfg.endpoint.rpartition(":")
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host or "127.0.0.1", int(port)))
    sock.listen(1)
    try:
        conn, _ = sock.accept()
        try:
            with conn.makefile("r", encoding="utf-8") as rfile, \
                    conn.makefile("w", encoding="utf-8") as wfile:
                serve_streams(cfg, rfile, wfile)
        finally:
            conn.close()
    finally:
        sock.close()
