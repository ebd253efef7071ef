"""Length-prefixed JSON wire protocol between hub and edge.

Frame layout: 4-byte big-endian unsigned payload length, then a UTF-8 JSON
object of at most 16 MiB carrying a "type" field.  Message types: HELLO,
DATA, ALERT, FEEDBACK, ACK, ERROR.  Field names are documented in
docs/protocol_schema.json.
"""
from __future__ import annotations

import json
import struct

from .errors import FrameTooLarge, IncompleteFrame, MalformedPayload

MAX_PAYLOAD = 16 * 1024 * 1024
HEADER = struct.Struct("!I")

HELLO = "HELLO"
DATA = "DATA"
ALERT = "ALERT"
FEEDBACK = "FEEDBACK"
ACK = "ACK"
ERROR = "ERROR"
MESSAGE_TYPES = (HELLO, DATA, ALERT, FEEDBACK, ACK, ERROR)


def encode_frame(msg):
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise MalformedPayload(f"message must be a dict with a known type, got {msg!r}")
    payload = json.dumps(msg, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds 16 MiB")
    return HEADER.pack(len(payload)) + payload


def decode_frame(buf):
    """Decode one frame from the head of buf; returns (message, consumed)."""
    if len(buf) < HEADER.size:
        raise IncompleteFrame(f"{len(buf)} bytes, need 4 for the header")
    (n,) = HEADER.unpack(buf[:HEADER.size])
    if n > MAX_PAYLOAD:
        raise FrameTooLarge(f"declared length {n} exceeds 16 MiB")
    end = HEADER.size + n
    if len(buf) < end:
        raise IncompleteFrame(f"declared {n} payload bytes, {len(buf) - HEADER.size} available")
    try:
        msg = json.loads(buf[HEADER.size:end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise MalformedPayload(str(e)) from e
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise MalformedPayload("payload is not an object with a known type")
    return msg, end


def send_message(sock, msg):
    sock.sendall(encode_frame(msg))


def recv_exact(sock, n):
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise IncompleteFrame(f"connection closed with {remaining} bytes pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_message(sock):
    """Blocking read of exactly one frame; None on clean EOF at a boundary."""
    try:
        header = sock.recv(HEADER.size)
    except OSError:
        return None
    if not header:
        return None
    while len(header) < HEADER.size:
        more = sock.recv(HEADER.size - len(header))
        if not more:
            raise IncompleteFrame("connection closed mid-header")
        header += more
    (n,) = HEADER.unpack(header)
    if n > MAX_PAYLOAD:
        raise FrameTooLarge(f"declared length {n} exceeds 16 MiB")
    payload = recv_exact(sock, n)
    msg, _ = decode_frame(header + payload)
    return msg
