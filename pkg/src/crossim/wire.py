"""Wire protocol for live sessions: one JSON text frame per line over a
full-duplex byte stream. Every message carries a type, the session id and a
per-direction monotonically increasing sequence number; snapshots additionally
carry their own gap-free counter.
"""

from __future__ import annotations

import json
from typing import Optional

MESSAGE_TYPES = (
    "hello",
    "session_config",
    "snapshot",
    "input",
    "event",
    "prompt",
    "preference",
    "bye",
)


class WireError(ValueError):
    pass


def encode_frame(msg: dict) -> bytes:
    if msg.get("type") not in MESSAGE_TYPES:
        raise WireError(f"unknown message type {msg.get('type')!r}")
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


def decode_frame(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"malformed frame: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise WireError(f"unknown message type {msg.get('type') if isinstance(msg, dict) else msg!r}")
    return msg


class Outbox:
    """Stamps outbound messages with per-direction sequence numbers."""

    def __init__(self, session_id: str):
        self.session_id = session_id
        self.seq = 0
        self.snap = 0

    def make(self, mtype: str, **payload) -> dict:
        msg = {"type": mtype, "session": self.session_id, "seq": self.seq, **payload}
        self.seq += 1
        if mtype == "snapshot":
            msg["snap"] = self.snap
            self.snap += 1
        return msg


class Inbox:
    """Validates that inbound sequence numbers increase monotonically."""

    def __init__(self):
        self.last_seq: Optional[int] = None

    def accept(self, msg: dict) -> dict:
        seq = msg.get("seq")
        if not isinstance(seq, int):
            raise WireError("message missing sequence number")
        if self.last_seq is not None and seq <= self.last_seq:
            raise WireError(f"sequence number went backwards: {seq} after {self.last_seq}")
        self.last_seq = seq
        return msg


def clamp_speed(vx: float, vy: float, v_max: float) -> tuple[float, float]:
    """Respondents are not allowed to run; inputs are capped server-side."""
    mag = (vx * vx + vy * vy) ** 0.5
    if mag <= v_max or mag == 0.0:
        return (vx, vy)
    return (vx * v_max / mag, vy * v_max / mag)
