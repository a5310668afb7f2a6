"""Reference key-value engine, wire protocol, daemon and client."""

from .client import KVClient, KVError, connector, write_amplification
from .engine import CorruptStoreError, LogStore, StoreError, StoreOptions
from .protocol import Frame, Opcode, ProtocolError, StatusCode, decode_frame, encode_frame
from .server import KVDaemon, serve

__all__ = [
    "CorruptStoreError", "Frame", "KVClient", "KVDaemon", "KVError", "LogStore", "Opcode",
    "ProtocolError", "StatusCode", "StoreError", "StoreOptions", "connector", "decode_frame",
    "encode_frame", "serve", "write_amplification",
]
