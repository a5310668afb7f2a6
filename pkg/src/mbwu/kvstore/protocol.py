"""Length-prefixed binary frames spoken between client and daemon.

Frame layout, all integers little-endian::

    u32 length | u8 opcode | u64 request_id | payload

``length`` counts the opcode, request id and payload bytes.  Inside a
payload, byte strings are carried as ``u32 len | bytes``.  Every request is
answered by exactly one ``STATUS`` frame echoing the request id, whose
payload is ``u8 status_code`` followed by one length-prefixed body.
"""

from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass

from ..errors import MbwuError

_PREFIX = struct.Struct("<I")
_HEAD = struct.Struct("<BQ")
_LEN = struct.Struct("<I")

MAX_FRAME = 64 << 20


class Opcode(enum.IntEnum):
    OPEN = 1
    CLOSE = 2
    GET = 3
    PUT = 4
    DELETE = 5
    STATUS = 6


class StatusCode(enum.IntEnum):
    OK = 0
    NOT_FOUND = 1
    BAD_REQUEST = 2
    NOT_OPEN = 3
    IO_ERROR = 4
    CORRUPT = 5


class ProtocolError(MbwuError):
    def __init__(self, message, request_id=None):
        super().__init__(message)
        self.request_id = request_id


@dataclass(frozen=True)
class Frame:
    opcode: Opcode
    request_id: int
    payload: bytes = b""

    @property
    def length(self) -> int:
        return _HEAD.size + len(self.payload)


def encode_frame(frame: Frame) -> bytes:
    if not 0 <= frame.request_id < 1 << 64:
        raise ProtocolError("request_id out of range")
    return _PREFIX.pack(frame.length) + _HEAD.pack(int(frame.opcode), frame.request_id) + frame.payload


def decode_body(body: bytes) -> Frame:
    """Decode the bytes that follow the length prefix."""
    if len(body) < _HEAD.size:
        raise ProtocolError(f"frame body too short ({len(body)} bytes)")
    raw_op, request_id = _HEAD.unpack_from(body)
    try:
        opcode = Opcode(raw_op)
    except ValueError:
        raise ProtocolError(f"unknown opcode {raw_op}", request_id) from None
    return Frame(opcode, request_id, bytes(body[_HEAD.size:]))


def decode_frame(buf: bytes) -> tuple[Frame, int]:
    """Decode one frame from the front of ``buf``; return it and bytes consumed."""
    if len(buf) < _PREFIX.size:
        raise ProtocolError("incomplete length prefix")
    (length,) = _PREFIX.unpack_from(buf)
    end = _PREFIX.size + length
    if len(buf) < end:
        raise ProtocolError(f"incomplete frame: need {end} bytes, have {len(buf)}")
    return decode_body(buf[_PREFIX.size:end]), end


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise EOFError("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    (length,) = _PREFIX.unpack(_recv_exact(sock, _PREFIX.size))
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    return decode_body(_recv_exact(sock, length))


def write_frame(sock: socket.socket, frame: Frame) -> None:
    sock.sendall(encode_frame(frame))


def pack_fields(*fields: bytes) -> bytes:
    return b"".join(_LEN.pack(len(f)) + f for f in fields)


def unpack_fields(payload: bytes, count: int) -> list[bytes]:
    out, pos = [], 0
    for _ in range(count):
        if pos + _LEN.size > len(payload):
            raise ProtocolError("truncated payload field")
        (n,) = _LEN.unpack_from(payload, pos)
        pos += _LEN.size
        if pos + n > len(payload):
            raise ProtocolError("truncated payload field")
        out.append(payload[pos:pos + n])
        pos += n
    if pos != len(payload):
        raise ProtocolError("trailing bytes in payload")
    return out


def status_payload(code: StatusCode, body: bytes = b"") -> bytes:
    return bytes([int(code)]) + pack_fields(body)


def parse_status(payload: bytes) -> tuple[StatusCode, bytes]:
    if not payload:
        raise ProtocolError("empty status payload")
    try:
        code = StatusCode(payload[0])
    except ValueError:
        raise ProtocolError(f"unknown status code {payload[0]}") from None
    (body,) = unpack_fields(payload[1:], 1)
    return code, body
