"""Wire format for the realtime guidance service.

Messages are JSON objects framed as length-delimited UTF-8 text: the
payload's byte length in ASCII decimal, a newline, the payload, a
newline. Every message carries schema_version, a type tag, the
session_id, and a per-direction monotonically increasing sequence
number. Video never crosses the wire; clients send only corner
detections and capture requests.
"""

from __future__ import annotations

import json

from .errors import SchemaError

SCHEMA_VERSION = 1

CLIENT_TYPES = ("client_hello", "corner_update", "manual_capture_request")
SERVER_TYPES = (
    "server_target",
    "server_progress",
    "server_capture",
    "server_complete",
    "server_error",
)

MAX_FRAME_BYTES = 4 * 1024 * 1024


def make_message(msg_type: str, session_id: str, seq: int, payload: dict | None = None) -> dict:
    if msg_type not in CLIENT_TYPES and msg_type not in SERVER_TYPES:
        raise SchemaError(f"unknown message type {msg_type!r}")
    return {
        "schema_version": SCHEMA_VERSION,
        "type": msg_type,
        "session_id": session_id,
        "seq": int(seq),
        "payload": payload or {},
    }


def validate_message(data: dict) -> dict:
    """Check the envelope of an incoming message; returns it unchanged."""
    if not isinstance(data, dict):
        raise SchemaError("message must be a JSON object")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {data.get('schema_version')!r}")
    for key in ("type", "session_id", "seq"):
        if key not in data:
            raise SchemaError(f"message missing {key!r}")
    if data["type"] not in CLIENT_TYPES and data["type"] not in SERVER_TYPES:
        raise SchemaError(f"unknown message type {data['type']!r}")
    if not isinstance(data["seq"], int):
        raise SchemaError("seq must be an integer")
    if not isinstance(data.get("payload", {}), dict):
        raise SchemaError("payload must be an object")
    return data


def encode_frame(message: dict) -> bytes:
    body = json.dumps(message, sort_keys=True).encode("utf-8")
    return str(len(body)).encode("ascii") + b"\n" + body + b"\n"


class FrameDecoder:
    """Incremental decoder for the length-delimited framing."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[dict]:
        self._buf.extend(data)
        out = []
        while True:
            newline = self._buf.find(b"\n")
            if newline < 0:
                break
            header = bytes(self._buf[:newline])
            try:
                length = int(header)
            except ValueError:
                raise SchemaError(f"invalid frame length header {header!r}")
            if length < 0 or length > MAX_FRAME_BYTES:
                raise SchemaError(f"frame length {length} out of bounds")
            # header + \n + body + \n
            total = newline + 1 + length + 1
            if len(self._buf) < total:
                break
            body = bytes(self._buf[newline + 1 : newline + 1 + length])
            if self._buf[total - 1 : total] != b"\n":
                raise SchemaError("frame missing trailing newline")
            del self._buf[:total]
            try:
                out.append(json.loads(body.decode("utf-8")))
            except (UnicodeDecodeError, json.JSONDecodeError) as err:
                raise SchemaError(f"frame body is not valid JSON: {err}")
        return out


def read_frame(stream) -> dict | None:
    """Blocking read of one frame from a file-like byte stream.

    Returns None on a clean EOF at a frame boundary.
    """
    header = b""
    while not header.endswith(b"\n"):
        byte = stream.read(1)
        if not byte:
            if header:
                raise SchemaError("EOF inside frame header")
            return None
        header += byte
    try:
        length = int(header.strip())
    except ValueError:
        raise SchemaError(f"invalid frame length header {header!r}")
    if length < 0 or length > MAX_FRAME_BYTES:
        raise SchemaError(f"frame length {length} out of bounds")
    body = b""
    while len(body) < length + 1:
        chunk = stream.read(length + 1 - len(body))
        if not chunk:
            raise SchemaError("EOF inside frame body")
        body += chunk
    return json.loads(body[:length].decode("utf-8"))


def corners_to_wire(corners) -> list:
    return [[int(i), [float(u), float(v)]] for i, (u, v) in corners]


def corners_from_wire(data) -> tuple:
    return tuple((int(c[0]), (float(c[1][0]), float(c[1][1]))) for c in data)
