"""Single-file append-log key-value engine.

Every PUT or DELETE appends one record to ``store.log``; an in-memory index
maps each live key to the offset of its value.  When dead bytes dominate the
file, live records are rewritten into a fresh log (compaction).  Compaction
copies a snapshot of the live records without blocking clients and holds the
write lock only to catch up with records changed meanwhile and swap files.  The engine
counts logical bytes received in PUTs and physical bytes written to the file
so that traffic amplification can be observed.

Record layout (little-endian)::

    u8 kind | u32 key_len | u32 value_len | key | value | u32 crc32
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import struct
import threading
import time
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..errors import MbwuError

MAGIC = b"MBWUKVL1"
LOG_NAME = "store.log"
COUNTERS_NAME = "counters.json"

_HEADER = struct.Struct("<BII")
_CRC = struct.Struct("<I")
_PUT = 1
_DELETE = 2
# compaction chases concurrent writes unlocked for at most this many rounds,
# stopping early once a round has this few records left to copy
_CATCH_UP_ROUNDS = 8
_CATCH_UP_DONE = 64
# background compaction copies at this fraction of the recent append rate,
# spreading its cost over the compaction cycle instead of bursting
_COMPACTION_PACE = 0.4
_MIN_PACE = 4 << 20
_PACE_CHUNK = 1 << 20


class StoreError(MbwuError):
    pass


class CorruptStoreError(StoreError):
    pass


@dataclass
class StoreOptions:
    data_dir: Optional[str] = None
    sync_on_put: bool = False
    memory_budget: int = 0
    compaction_ratio: float = 0.75
    compaction_min_bytes: int = 64 << 20

    @property
    def options_digest(self) -> str:
        # data_dir is deployment-specific; it does not shape the engine
        fields = self.to_dict(include_digest=False)
        fields.pop("data_dir")
        canonical = json.dumps(fields, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def to_dict(self, include_digest=True) -> dict:
        data = dataclasses.asdict(self)
        if include_digest:
            data["options_digest"] = self.options_digest
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "StoreOptions":
        data = dict(data)
        data.pop("options_digest", None)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise StoreError(f"unknown store option(s): {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "StoreOptions":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


class _RWLock:
    """Phase-fair shared/exclusive lock.

    Writers are served in arrival order; waiting writers block new readers,
    and readers already waiting when a writer releases go before the next
    writer, so no one starves.
    """

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0
        self._readers_waiting = 0
        self._read_turn = False
        self._next_ticket = 0
        self._serving = 0

    def acquire_read(self):
        with self._cond:
            self._readers_waiting += 1
            while self._writer or (self._writers_waiting and not self._read_turn):
                self._cond.wait()
            self._readers_waiting -= 1
            self._readers += 1
            if self._readers_waiting == 0 and self._read_turn:
                self._read_turn = False
                self._cond.notify_all()

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            ticket = self._next_ticket
            self._next_ticket += 1
            self._writers_waiting += 1
            while self._serving != ticket or self._writer or self._readers or self._read_turn:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._serving += 1
            self._read_turn = self._readers_waiting > 0
            self._cond.notify_all()


class _ValueCache:
    def __init__(self, budget):
        self.budget = budget
        self.used = 0
        self._items: OrderedDict[bytes, bytes] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        if self.budget <= 0:
            return None
        with self._lock:
            value = self._items.get(key)
            if value is not None:
                self._items.move_to_end(key)
            return value

    def put(self, key, value):
        if self.budget <= 0 or len(value) > self.budget:
            return
        with self._lock:
            old = self._items.pop(key, None)
            if old is not None:
                self.used -= len(old)
            self._items[key] = value
            self.used += len(value)
            while self.used > self.budget:
                _, evicted = self._items.popitem(last=False)
                self.used -= len(evicted)

    def discard(self, key):
        with self._lock:
            old = self._items.pop(key, None)
            if old is not None:
                self.used -= len(old)

    def clear(self):
        with self._lock:
            self._items.clear()
            self.used = 0


class LogStore:
    """Append-log store bound to one directory.

    Writers are serialized; readers proceed concurrently with each other.
    The store is itself a workload endpoint (``get``/``put``/``delete``).
    """

    def __init__(self, data_dir, options: Optional[StoreOptions] = None):
        self.data_dir = Path(data_dir)
        if not self.data_dir.is_dir():
            raise StoreError(f"data directory {self.data_dir} does not exist")
        self.options = options or StoreOptions()
        self.path = self.data_dir / LOG_NAME
        self._lock = _RWLock()
        self._cache = _ValueCache(self.options.memory_budget)
        self._index: dict[bytes, tuple[int, int]] = {}
        self.logical_bytes = 0
        self.device_bytes = 0
        self.compactions = 0
        self._dead_bytes = 0
        self._compaction_lock = threading.Lock()
        self._compactor: Optional[threading.Thread] = None
        self._closing = threading.Event()
        self._cycle_start = time.monotonic()
        self._cycle_bytes = 0
        self._load_counters()
        self._fd = self._open_log()
        self._end = self._recover()
        self._closed = False

    # -- lifecycle -------------------------------------------------------

    def _open_log(self):
        fresh = not self.path.exists() or self.path.stat().st_size == 0
        fd = os.open(self.path, os.O_RDWR | os.O_CREAT | os.O_APPEND, 0o644)
        if fresh:
            os.write(fd, MAGIC)
            os.fsync(fd)
            self.device_bytes += len(MAGIC)
        return fd

    def _recover(self) -> int:
        size = os.fstat(self._fd).st_size
        if os.pread(self._fd, len(MAGIC), 0) != MAGIC:
            os.close(self._fd)
            raise CorruptStoreError(f"{self.path} is not a store log")
        offset = len(MAGIC)
        while offset + _HEADER.size <= size:
            kind, klen, vlen = _HEADER.unpack(os.pread(self._fd, _HEADER.size, offset))
            body_len = klen + vlen
            total = _HEADER.size + body_len + _CRC.size
            if kind not in (_PUT, _DELETE) or offset + total > size:
                break
            blob = os.pread(self._fd, total, offset)
            (crc,) = _CRC.unpack(blob[-_CRC.size:])
            if zlib.crc32(blob[:-_CRC.size]) != crc:
                break
            key = blob[_HEADER.size:_HEADER.size + klen]
            old = self._index.pop(key, None)
            if old is not None:
                self._dead_bytes += _HEADER.size + klen + old[1] + _CRC.size
            if kind == _PUT:
                self._index[key] = (offset + _HEADER.size + klen, vlen)
            else:
                self._dead_bytes += total
            offset += total
        if offset < size:
            # torn tail from an interrupted append; drop it
            os.ftruncate(self._fd, offset)
        return offset

    def _load_counters(self):
        path = self.data_dir / COUNTERS_NAME
        if path.exists():
            try:
                data = json.loads(path.read_text())
                self.logical_bytes = int(data["logical_bytes"])
                self.device_bytes = int(data["device_bytes"])
                self.compactions = int(data.get("compactions", 0))
            except (ValueError, KeyError) as exc:
                raise CorruptStoreError(f"bad counters file {path}: {exc}") from exc

    def _save_counters(self):
        data = {"logical_bytes": self.logical_bytes, "device_bytes": self.device_bytes,
                "compactions": self.compactions}
        (self.data_dir / COUNTERS_NAME).write_text(json.dumps(data) + "\n")

    def close(self):
        if self._closed:
            return
        self._closing.set()
        if self._compactor is not None:
            self._compactor.join()
        self._lock.acquire_write()
        try:
            os.fsync(self._fd)
            self._save_counters()
            self._drop_page_cache()
            os.close(self._fd)
            self._closed = True
        finally:
            self._lock.release_write()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _drop_page_cache(self):
        if hasattr(os, "posix_fadvise"):
            try:
                os.posix_fadvise(self._fd, 0, 0, os.POSIX_FADV_DONTNEED)
            except OSError:
                pass

    def drop_caches(self):
        """Forget cached values and ask the OS to evict the log's pages."""
        self._cache.clear()
        os.fsync(self._fd)
        self._drop_page_cache()

    # -- operations ------------------------------------------------------

    def _check_open(self):
        if self._closed:
            raise StoreError("store is closed")

    def get(self, key: bytes) -> Optional[bytes]:
        self._check_open()
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        self._lock.acquire_read()
        try:
            loc = self._index.get(key)
            if loc is None:
                return None
            value = os.pread(self._fd, loc[1], loc[0])
        finally:
            self._lock.release_read()
        if len(value) != loc[1]:
            raise StoreError(f"short read for key {key!r}")
        self._cache.put(key, value)
        return value

    def _append(self, kind, key, value):
        head = _HEADER.pack(kind, len(key), len(value))
        body = head + key + value
        record = body + _CRC.pack(zlib.crc32(body))
        written = os.write(self._fd, record)
        if written != len(record):
            raise StoreError("short write to log")
        if self.options.sync_on_put:
            os.fsync(self._fd)
        offset = self._end
        self._end += len(record)
        self._cycle_bytes += len(record)
        self.device_bytes += len(record)
        return offset, len(record)

    def put(self, key: bytes, value: bytes) -> None:
        self._check_open()
        self._lock.acquire_write()
        try:
            offset, size = self._append(_PUT, key, value)
            self.logical_bytes += len(key) + len(value)
            old = self._index.get(key)
            if old is not None:
                self._dead_bytes += _HEADER.size + len(key) + old[1] + _CRC.size
            self._index[key] = (offset + _HEADER.size + len(key), len(value))
            self._cache.discard(key)
            self._maybe_compact()
        finally:
            self._lock.release_write()

    def delete(self, key: bytes) -> bool:
        self._check_open()
        self._lock.acquire_write()
        try:
            old = self._index.pop(key, None)
            if old is None:
                return False
            _, size = self._append(_DELETE, key, b"")
            self._dead_bytes += size + _HEADER.size + len(key) + old[1] + _CRC.size
            self._cache.discard(key)
            self._maybe_compact()
            return True
        finally:
            self._lock.release_write()

    def __len__(self):
        return len(self._index)

    def __contains__(self, key):
        return key in self._index

    def keys(self):
        return set(self._index)

    # -- compaction and accounting --------------------------------------

    def _maybe_compact(self):
        """Start a background compaction once dead bytes dominate the log.

        Called with the write lock held.
        """
        opts = self.options
        if self._end < opts.compaction_min_bytes or self._dead_bytes <= opts.compaction_ratio * self._end:
            return
        if self._closing.is_set() or (self._compactor is not None and self._compactor.is_alive()):
            return
        rate = self._cycle_bytes / max(time.monotonic() - self._cycle_start, 1e-3)
        self._compactor = threading.Thread(target=self._background_compact, name="kv-compactor",
                                           args=(max(rate * _COMPACTION_PACE, _MIN_PACE),), daemon=True)
        self._compactor.start()

    def _background_compact(self, pace):
        try:
            self.compact(pace)
        except StoreError:
            pass  # store closed underneath us; the old log is intact

    def compact(self, pace: Optional[float] = None):
        """Rewrite the live records into a fresh log.

        Records are copied without holding the store lock, in rounds that
        chase writes landing meanwhile; only the last, small round and the
        swap run under the write lock.  ``pace`` (bytes/s) throttles the
        bulk round and doubles for each catch-up round; closing the store
        lifts the throttle.
        """
        self._check_open()
        with self._compaction_lock:
            tmp = self.data_dir / (LOG_NAME + ".compact")
            fd = os.open(tmp, os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND, 0o644)
            try:
                offset = os.write(fd, MAGIC)
                copied = {}  # key -> (location in the old log, location in the new one)
                started, throttled = time.monotonic(), 0
                for _ in range(_CATCH_UP_ROUNDS):
                    # the old log is append-only, so snapshot offsets stay valid unlocked
                    self._lock.acquire_read()
                    try:
                        self._check_open()
                        old_fd = self._fd
                        stale = [(k, loc) for k, loc in self._index.items()
                                 if copied.get(k, (None,))[0] != loc]
                    finally:
                        self._lock.release_read()
                    for key, loc in stale:
                        offset += self._copy_record(old_fd, fd, key, loc, offset, copied)
                        if pace and offset - throttled >= _PACE_CHUNK and not self._closing.is_set():
                            # close() wakes the wait and the rest of the copy runs unthrottled
                            self._closing.wait(max(0.0, started + (offset - throttled) / pace - time.monotonic()))
                            started, throttled = time.monotonic(), offset
                    if pace:
                        pace *= 2  # catch-up rounds speed up so they converge
                    if len(stale) <= _CATCH_UP_DONE:
                        break
                os.fsync(fd)  # the bulk; the locked round below syncs only its tail
                self._lock.acquire_write()
                try:
                    self._check_open()
                    live, live_bytes = {}, len(MAGIC)
                    for key, loc in self._index.items():
                        if copied.get(key, (None,))[0] != loc:
                            offset += self._copy_record(self._fd, fd, key, loc, offset, copied)
                        live[key] = copied[key][1]
                        live_bytes += _HEADER.size + len(key) + loc[1] + _CRC.size
                    os.fsync(fd)
                    os.replace(tmp, self.path)
                    os.close(self._fd)
                    self._fd = fd
                    self._index = live
                    self._end = offset
                    self._dead_bytes = offset - live_bytes
                    self._cycle_start, self._cycle_bytes = time.monotonic(), 0
                    self.device_bytes += offset
                    self.compactions += 1
                finally:
                    self._lock.release_write()
            except BaseException:
                if self._fd != fd:
                    os.close(fd)
                    tmp.unlink(missing_ok=True)
                raise

    @staticmethod
    def _copy_record(src_fd, dst_fd, key, loc, offset, copied) -> int:
        voff, vlen = loc
        value = os.pread(src_fd, vlen, voff)
        body = _HEADER.pack(_PUT, len(key), vlen) + key + value
        record = body + _CRC.pack(zlib.crc32(body))
        os.write(dst_fd, record)
        copied[key] = (loc, (offset + _HEADER.size + len(key), vlen))
        return len(record)

    def write_amplification(self) -> float:
        """Physical bytes written per logical byte received; NaN before any PUT."""
        if self.logical_bytes == 0:
            return math.nan
        return self.device_bytes / self.logical_bytes

    def stats(self) -> dict:
        wa = self.write_amplification()
        return {
            "records": len(self._index),
            "logical_bytes": self.logical_bytes,
            "device_bytes": self.device_bytes,
            "log_bytes": self._end,
            "dead_bytes": self._dead_bytes,
            "compactions": self.compactions,
            "write_amplification": None if math.isnan(wa) else wa,
            "options_digest": self.options.options_digest,
        }
