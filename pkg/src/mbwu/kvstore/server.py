"""Key-value daemon: one process (or thread) per storage device.

The daemon is bound to a single data directory.  OPEN instantiates the store
on that directory, or shares the already open instance; CLOSE releases the
caller's reference and the store closes when the last reference goes away.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import socket
import socketserver
import sys
import threading
from pathlib import Path

from .engine import CorruptStoreError, LogStore, StoreError, StoreOptions
from .protocol import (Frame, Opcode, ProtocolError, StatusCode, read_frame,
                       status_payload, unpack_fields, write_frame)

log = logging.getLogger(__name__)


def parse_address(address) -> tuple[str, int]:
    if isinstance(address, tuple):
        return address
    host, _, port = str(address).rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {address!r}")
    return host, int(port)


class _Handler(socketserver.BaseRequestHandler):
    def setup(self):
        self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.opened = False

    def handle(self):
        daemon: KVDaemon = self.server.kv_daemon
        sock = self.request
        try:
            while True:
                try:
                    frame = read_frame(sock)
                except EOFError:
                    return
                except ProtocolError as exc:
                    rid = exc.request_id if exc.request_id is not None else 0
                    write_frame(sock, Frame(Opcode.STATUS, rid,
                                            status_payload(StatusCode.BAD_REQUEST, str(exc).encode())))
                    if exc.request_id is None:
                        return
                    continue
                code, body = self.dispatch(daemon, frame)
                write_frame(sock, Frame(Opcode.STATUS, frame.request_id, status_payload(code, body)))
        except (ConnectionError, OSError) as exc:
            log.debug("connection dropped: %s", exc)
        finally:
            if self.opened:
                daemon.release()
                self.opened = False

    def dispatch(self, daemon, frame):
        op = frame.opcode
        try:
            if op is Opcode.OPEN:
                if self.opened:
                    return StatusCode.OK, b""
                options = None
                if frame.payload:
                    (raw,) = unpack_fields(frame.payload, 1)
                    if raw:
                        options = StoreOptions.from_dict(json.loads(raw))
                daemon.acquire(options)
                self.opened = True
                return StatusCode.OK, b""
            if op is Opcode.STATUS:
                action = unpack_fields(frame.payload, 1)[0].decode() if frame.payload else ""
                return StatusCode.OK, json.dumps(daemon.status(action)).encode()
            if not self.opened:
                return StatusCode.NOT_OPEN, b"OPEN required"
            store = daemon.store
            if op is Opcode.CLOSE:
                daemon.release()
                self.opened = False
                return StatusCode.OK, b""
            if op is Opcode.GET:
                (key,) = unpack_fields(frame.payload, 1)
                value = store.get(key)
                if value is None:
                    return StatusCode.NOT_FOUND, b""
                return StatusCode.OK, value
            if op is Opcode.PUT:
                key, value = unpack_fields(frame.payload, 2)
                store.put(key, value)
                return StatusCode.OK, b""
            if op is Opcode.DELETE:
                (key,) = unpack_fields(frame.payload, 1)
                return (StatusCode.OK if store.delete(key) else StatusCode.NOT_FOUND), b""
        except ProtocolError as exc:
            return StatusCode.BAD_REQUEST, str(exc).encode()
        except CorruptStoreError as exc:
            return StatusCode.CORRUPT, str(exc).encode()
        except (StoreError, OSError, ValueError) as exc:
            return StatusCode.IO_ERROR, str(exc).encode()
        return StatusCode.BAD_REQUEST, f"unexpected opcode {op.name}".encode()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class KVDaemon:
    """Serve one store directory over the frame protocol."""

    def __init__(self, listen_address, device_binding, sync_on_put=False, options=None):
        self.device_binding = Path(device_binding)
        self.default_options = options or StoreOptions(sync_on_put=sync_on_put)
        self.store = None
        self._refs = 0
        self._lock = threading.Lock()
        self._server = _Server(parse_address(listen_address), _Handler)
        self._server.kv_daemon = self
        self._thread = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def acquire(self, options=None):
        with self._lock:
            if self.store is None:
                opts = options or self.default_options
                opts.data_dir = str(self.device_binding)
                self.store = LogStore(self.device_binding, opts)
            self._refs += 1

    def release(self):
        with self._lock:
            self._refs -= 1
            if self._refs <= 0 and self.store is not None:
                self.store.close()
                self.store = None
                self._refs = 0

    def status(self, action=""):
        with self._lock:
            store = self.store
            if store is not None and action == "compact":
                store.compact()
            elif store is not None and action == "drop-cache":
                store.drop_caches()
            info = {"device": str(self.device_binding), "open_handles": self._refs}
            if store is not None:
                info.update(store.stats())
            return info

    def serve_forever(self):
        self._server.serve_forever(poll_interval=0.1)

    def start(self):
        """Serve from a background thread; returns self."""
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        with self._lock:
            if self.store is not None:
                self.store.close()
                self.store = None
                self._refs = 0
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()


def serve(listen_address, device_binding, sync_on_put=False, options=None):
    """Run a daemon in the foreground until SIGINT or SIGTERM."""
    daemon = KVDaemon(listen_address, device_binding, sync_on_put, options)
    stop = threading.Event()

    def _stop(signum, _frame):
        log.info("signal %s, shutting down", signum)
        stop.set()

    signal.signal(signal.SIGINT, _stop)
    signal.signal(signal.SIGTERM, _stop)
    daemon.start()
    log.info("serving %s on %s", device_binding, daemon.address)
    print(daemon.address, flush=True)
    stop.wait()
    daemon.shutdown()


def main(argv=None):
    parser = argparse.ArgumentParser(prog="mbwu-kvd", description="key-value daemon bound to one device")
    parser.add_argument("--listen", required=True, help="HOST:PORT (port 0 picks a free port)")
    parser.add_argument("--data", required=True, help="data directory on the bound device")
    parser.add_argument("--sync", action="store_true", help="fsync after every put")
    parser.add_argument("--options", help="store options JSON file")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    options = StoreOptions.from_file(args.options) if args.options else None
    if options is not None and args.sync:
        options.sync_on_put = True
    try:
        serve(args.listen, args.data, args.sync, options)
    except OSError as exc:
        print(f"mbwu-kvd: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
