"""Blocking client for the key-value daemon."""

from __future__ import annotations

import itertools
import json
import math
import socket

from ..errors import MbwuError
from .engine import LogStore, StoreOptions
from .protocol import (Frame, Opcode, StatusCode, pack_fields, parse_status, read_frame,
                       write_frame)
from .server import parse_address


class KVError(MbwuError):
    def __init__(self, code: StatusCode, message: str = ""):
        super().__init__(f"{code.name}: {message}" if message else code.name)
        self.code = code


class KVClient:
    """One connection to a daemon.  Not thread-safe; give each worker its own."""

    def __init__(self, address, timeout=30.0):
        self.address = address
        self._sock = socket.create_connection(parse_address(address), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._ids = itertools.count(1)
        self.opened = False

    def _call(self, opcode, payload=b"", ok=(StatusCode.OK,)):
        rid = next(self._ids)
        write_frame(self._sock, Frame(opcode, rid, payload))
        reply = read_frame(self._sock)
        if reply.opcode is not Opcode.STATUS or reply.request_id != rid:
            raise KVError(StatusCode.BAD_REQUEST, f"unexpected reply to request {rid}")
        code, body = parse_status(reply.payload)
        if code not in ok:
            raise KVError(code, body.decode(errors="replace"))
        return code, body

    def open(self, options: StoreOptions | None = None):
        payload = pack_fields(json.dumps(options.to_dict()).encode()) if options else b""
        self._call(Opcode.OPEN, payload)
        self.opened = True
        return self

    def get(self, key: bytes):
        code, body = self._call(Opcode.GET, pack_fields(key), ok=(StatusCode.OK, StatusCode.NOT_FOUND))
        return None if code is StatusCode.NOT_FOUND else body

    def put(self, key: bytes, value: bytes) -> None:
        self._call(Opcode.PUT, pack_fields(key, value))

    def delete(self, key: bytes) -> bool:
        code, _ = self._call(Opcode.DELETE, pack_fields(key), ok=(StatusCode.OK, StatusCode.NOT_FOUND))
        return code is StatusCode.OK

    def status(self, action: str = "") -> dict:
        _, body = self._call(Opcode.STATUS, pack_fields(action.encode()) if action else b"")
        return json.loads(body)

    def close(self):
        try:
            if self.opened:
                self._call(Opcode.CLOSE)
                self.opened = False
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connector(address, options: StoreOptions | None = None, timeout=30.0):
    """Return a factory of opened clients, one per call (for ``run_phase``)."""
    def connect():
        return KVClient(address, timeout).open(options)
    return connect


def write_amplification(handle) -> float:
    """Device bytes written per logical PUT byte, NaN when no PUT was served."""
    if isinstance(handle, LogStore):
        return handle.write_amplification()
    value = handle.status().get("write_amplification")
    return math.nan if value is None else float(value)
