"""Codec for the newline-delimited lockstep protocol, version 1.

Implemented from ``docs/protocol.md`` alone so the adapter stays
independent of the trainer package. Encodings are canonical: ``v`` and
``type`` first, then the message's fields in grammar order, no spaces.
"""

from __future__ import annotations

import json
import math

PROTOCOL_VERSION = 1

# canonical field order per message type (after v, type)
FIELDS = {
    "hello": ("features", "action"),
    "reset": ("seed", "day"),
    "obs": ("t", "features", "cooling_w", "baseline_w", "done"),
    "act": ("action",),
    "error": ("code", "message"),
    "close": (),
}


class DecodeError(ValueError):
    """Line cannot be decoded into a protocol message."""


def encode(msg: dict) -> str:
    mtype = msg.get("type")
    if mtype not in FIELDS:
        raise DecodeError(f"unknown message type {mtype!r}")
    out = {"v": PROTOCOL_VERSION, "type": mtype}
    for name in FIELDS[mtype]:
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
    if mtype not in FIELDS:
        raise DecodeError(f"unknown message type {mtype!r}")
    out = {"type": mtype}
    for name in FIELDS[mtype]:
        if name not in doc:
            raise DecodeError(f"{mtype} message missing field {name!r}")
        out[name] = doc[name]
    return out


def is_finite_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) \
        and math.isfinite(x)
