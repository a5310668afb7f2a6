"""Workload definitions, reproducible operation streams and load/run drivers.

A workload is plain data (:class:`WorkloadSpec`).  From it we derive a key
generator (uniform or Zipf over the record space), an operation stream, and
two drivers that push that stream at a key-value endpoint: ``load_phase``
inserts the initial records, ``run_phase`` issues the mixed workload from a
pool of worker threads.

An *endpoint* is anything with ``get(key)``, ``put(key, value)`` and
``delete(key)``.  ``get`` returns ``None`` for missing keys.  ``run_phase``
also accepts a zero-argument callable returning an endpoint, in which case
every worker opens its own connection.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import AbortedLoadError, InvalidSpecError, PartialRunError

DISTRIBUTIONS = ("zipf", "uniform")
DEFAULT_ZIPF_THETA = 0.99
DEFAULT_SAMPLE_INTERVAL = 1.0

_BATCH = 4096


@dataclass(frozen=True)
class WorkloadSpec:
    """Full description of a key-value workload.

    Either ``record_count`` or ``dataset_size`` must be given; the other is
    derived.  ``op_count`` bounds the run-phase stream; when it is ``None``
    the stream is unbounded and ``duration`` (seconds) limits the run.
    """

    key_size: int = 16
    value_size: int = 4096
    read_fraction: float = 0.5
    key_distribution: str = "zipf"
    zipf_theta: float = DEFAULT_ZIPF_THETA
    record_count: Optional[int] = None
    dataset_size: Optional[int] = None
    op_count: Optional[int] = None
    duration: Optional[float] = None
    load_rate_limit: Optional[float] = None
    seed: int = 0
    delete_fraction: float = 0.0

    def __post_init__(self):
        if self.key_size < 1:
            raise InvalidSpecError(f"key_size must be >= 1, got {self.key_size}")
        if self.value_size < 0:
            raise InvalidSpecError(f"value_size must be >= 0, got {self.value_size}")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise InvalidSpecError(f"read_fraction must be in [0, 1], got {self.read_fraction}")
        if not 0.0 <= self.delete_fraction <= 1.0 - self.read_fraction + 1e-12:
            raise InvalidSpecError("read_fraction + delete_fraction must not exceed 1")
        if self.key_distribution not in DISTRIBUTIONS:
            raise InvalidSpecError(f"unknown key_distribution {self.key_distribution!r}")
        if self.key_distribution == "zipf" and self.zipf_theta <= 0:
            raise InvalidSpecError("zipf_theta must be positive")
        if self.load_rate_limit is not None and self.load_rate_limit <= 0:
            raise InvalidSpecError("load_rate_limit must be positive when set")
        if self.op_count is not None and self.op_count < 0:
            raise InvalidSpecError("op_count must be >= 0")
        if self.duration is not None and self.duration < 0:
            raise InvalidSpecError("duration must be >= 0")

        record_size = self.record_size
        if self.record_count is None:
            if self.dataset_size is None:
                raise InvalidSpecError("one of record_count or dataset_size is required")
            object.__setattr__(self, "record_count", int(self.dataset_size // record_size))
        elif self.dataset_size is None:
            object.__setattr__(self, "dataset_size", int(self.record_count * record_size))
        elif abs(self.record_count * record_size - self.dataset_size) > record_size:
            raise InvalidSpecError(
                f"record_count={self.record_count} inconsistent with dataset_size={self.dataset_size}"
            )
        if self.record_count < 0:
            raise InvalidSpecError("record_count must be >= 0")
        if self.record_count > 10 ** self.key_size:
            raise InvalidSpecError(
                f"{self.record_count} records do not fit in {self.key_size}-byte decimal keys"
            )

    @property
    def record_size(self) -> int:
        return self.key_size + self.value_size

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidSpecError(f"unknown workload fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "WorkloadSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def digest(self) -> str:
        """Checksum of the canonical serialization; identifies the workload."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def replace(self, **changes) -> "WorkloadSpec":
        if "dataset_size" in changes and "record_count" not in changes:
            changes["record_count"] = None
        elif "record_count" in changes and "dataset_size" not in changes:
            changes["dataset_size"] = None
        return dataclasses.replace(self, **changes)


class OpKind(str, enum.Enum):
    GET = "GET"
    PUT = "PUT"
    DELETE = "DELETE"


@dataclass(frozen=True)
class WorkloadOp:
    kind: OpKind
    key: bytes
    value: Optional[bytes] = None


def encode_key(index: int, key_size: int) -> bytes:
    """Zero-padded decimal encoding of a record index."""
    text = str(index)
    if len(text) > key_size:
        raise InvalidSpecError(f"record index {index} does not fit in {key_size} bytes")
    return text.rjust(key_size, "0").encode("ascii")


@functools.lru_cache(maxsize=8)
def _zipf_cdf(n: int, theta: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -theta
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def _affine_permutation(n: int, seed: int) -> tuple[int, int]:
    # rank -> (a*rank + b) mod n is a bijection whenever gcd(a, n) == 1
    if n <= 1:
        return 1, 0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9E3779B9]))
    while True:
        a = int(rng.integers(1, n))
        if math.gcd(a, n) == 1:
            break
    b = int(rng.integers(0, n))
    return a, b


class KeyGenerator:
    """Draws record indices, and the keys naming them, from a popularity law.

    Zipf mode draws rank ``r`` in ``1..record_count`` with probability
    proportional to ``1 / r**theta`` by inverting the exact CDF.  Ranks map to
    record indices through a fixed affine permutation seeded by
    ``permutation_seed``, so the hottest records are not simply the first
    ones inserted.  Workers of one workload share ``permutation_seed`` and
    differ in ``seed``.
    """

    def __init__(self, record_count, distribution="zipf", theta=DEFAULT_ZIPF_THETA,
                 seed=0, key_size=16, permutation_seed=None):
        if record_count <= 0:
            raise InvalidSpecError("key generator needs record_count >= 1")
        if distribution not in DISTRIBUTIONS:
            raise InvalidSpecError(f"unknown key distribution {distribution!r}")
        self.record_count = int(record_count)
        self.distribution = distribution
        self.theta = float(theta)
        self.key_size = key_size
        self._rng = np.random.default_rng(seed)
        if permutation_seed is None:
            permutation_seed = seed if isinstance(seed, int) else 0
        self._perm_a, self._perm_b = _affine_permutation(self.record_count, permutation_seed)
        self._cdf = _zipf_cdf(self.record_count, self.theta) if distribution == "zipf" else None
        self._buffer = np.empty(0, dtype=np.int64)
        self._pos = 0

    @classmethod
    def for_spec(cls, spec: WorkloadSpec, seed=None) -> "KeyGenerator":
        return cls(spec.record_count, spec.key_distribution, spec.zipf_theta,
                   seed=spec.seed if seed is None else seed, key_size=spec.key_size,
                   permutation_seed=spec.seed)

    def sample_ranks(self, size: int) -> np.ndarray:
        """Return ``size`` 1-based popularity ranks."""
        u = self._rng.random(size)
        if self._cdf is None:
            ranks = np.floor(u * self.record_count).astype(np.int64)
        else:
            ranks = np.searchsorted(self._cdf, u, side="right")
        return np.minimum(ranks, self.record_count - 1) + 1

    def rank_to_index(self, rank):
        return (self._perm_a * (np.asarray(rank, dtype=np.int64) - 1) + self._perm_b) % self.record_count

    def sample_indices(self, size: int) -> np.ndarray:
        return self.rank_to_index(self.sample_ranks(size))

    def next_index(self) -> int:
        if self._pos >= len(self._buffer):
            self._buffer = self.sample_indices(_BATCH)
            self._pos = 0
        index = int(self._buffer[self._pos])
        self._pos += 1
        return index

    def next_key(self) -> bytes:
        return encode_key(self.next_index(), self.key_size)


def next_key(gen_state: KeyGenerator) -> bytes:
    return gen_state.next_key()


def op_stream(spec: WorkloadSpec, seed=None) -> Iterator[WorkloadOp]:
    """Yield the operation stream of ``spec``.

    ``seed`` (an int or ``numpy.random.SeedSequence``) selects the stream;
    it defaults to ``spec.seed``.  The stream has ``spec.op_count`` ops, or is
    unbounded when ``op_count`` is None.
    """
    if spec.record_count == 0:
        raise InvalidSpecError("cannot draw operations from an empty record space")
    root = np.random.SeedSequence(spec.seed if seed is None else seed) \
        if not isinstance(seed, np.random.SeedSequence) else seed
    key_seq, kind_seq, value_seq = root.spawn(3)
    keys = KeyGenerator.for_spec(spec, seed=key_seq)
    kind_rng = np.random.default_rng(kind_seq)
    value_rng = np.random.default_rng(value_seq)
    read_cut = spec.read_fraction
    delete_cut = spec.read_fraction + spec.delete_fraction

    remaining = spec.op_count
    while remaining is None or remaining > 0:
        size = _BATCH if remaining is None else min(_BATCH, remaining)
        u = kind_rng.random(size)
        indices = keys.sample_indices(size)
        for draw, index in zip(u, indices):
            key = encode_key(int(index), spec.key_size)
            if draw < read_cut:
                yield WorkloadOp(OpKind.GET, key)
            elif draw < delete_cut:
                yield WorkloadOp(OpKind.DELETE, key)
            else:
                yield WorkloadOp(OpKind.PUT, key, value_rng.bytes(spec.value_size))
        if remaining is not None:
            remaining -= size


class RateLimiter:
    """Token bucket holding at most one token and starting empty.

    The k-th ``acquire`` returns no earlier than ``k / rate`` seconds after
    construction, so any one-second window admits at most ``rate + 1``
    operations (a burst allowance of one token).
    """

    def __init__(self, rate, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.period = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._next = clock() + self.period

    def acquire(self) -> float:
        now = self._clock()
        if now < self._next:
            self._sleep(self._next - now)
            now = self._next
        self._next = max(self._next, now) + self.period
        return now


@dataclass
class RunReport:
    """Outcome of one load or run phase.

    Latencies are per-operation service times as seen by the issuing thread,
    in microseconds; they are not corrected for coordinated omission.
    """

    total_ops: int
    elapsed: float
    wops: float
    latency_percentiles: dict = field(default_factory=dict)
    per_thread_ops: list = field(default_factory=list)
    throughput_series: list = field(default_factory=list)
    interval: float = DEFAULT_SAMPLE_INTERVAL

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["throughput_series"] = [tuple(p) for p in data.get("throughput_series", [])]
        return cls(**data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def series_to_csv(self, path) -> None:
        lines = ["timestamp_s,ops"]
        lines += [f"{t:g},{ops}" for t, ops in self.throughput_series]
        Path(path).write_text("\n".join(lines) + "\n")

    @property
    def series_values(self) -> list:
        return [ops / self.interval for _, ops in self.throughput_series]


class LoadReport(RunReport):
    pass


def _percentiles(latencies_us: Sequence[float]) -> dict:
    if len(latencies_us) == 0:
        return {"p50": None, "p95": None, "p99": None}
    p50, p95, p99 = np.percentile(np.asarray(latencies_us), [50, 95, 99])
    return {"p50": float(p50), "p95": float(p95), "p99": float(p99)}


def _wops(total_ops, elapsed):
    return total_ops / elapsed if elapsed > 0 else 0.0


def _series(counts, interval, limit):
    return [(round((i + 1) * interval, 9), int(counts[i])) for i in range(limit)]


def record_value(spec: WorkloadSpec, index: int) -> bytes:
    """Deterministic initial value of record ``index``."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x10AD, index]))
    return rng.bytes(spec.value_size)


def load_phase(endpoint, spec: WorkloadSpec, interval=DEFAULT_SAMPLE_INTERVAL,
               clock=time.monotonic, sleep=time.sleep) -> LoadReport:
    """Insert every record of ``spec`` in index order.

    With ``spec.load_rate_limit`` set, inserts are paced through a
    :class:`RateLimiter`.  Failures raise :class:`AbortedLoadError` carrying
    the number of records already inserted.
    """
    limiter = RateLimiter(spec.load_rate_limit, clock, sleep) if spec.load_rate_limit else None
    counts: dict[int, int] = {}
    latencies = []
    start = clock()
    inserted = 0
    for index in range(spec.record_count):
        if limiter is not None:
            limiter.acquire()
        key = encode_key(index, spec.key_size)
        value = record_value(spec, index)
        t = time.perf_counter()
        try:
            endpoint.put(key, value)
        except Exception as exc:
            raise AbortedLoadError(f"load aborted after {inserted} records: {exc}", inserted) from exc
        latencies.append((time.perf_counter() - t) * 1e6)
        inserted += 1
        bucket = int((clock() - start) / interval)
        counts[bucket] = counts.get(bucket, 0) + 1
    elapsed = clock() - start
    n_buckets = max(counts) + 1 if counts else 0
    dense = [counts.get(i, 0) for i in range(n_buckets)]
    return LoadReport(
        total_ops=inserted,
        elapsed=elapsed,
        wops=_wops(inserted, elapsed),
        latency_percentiles=_percentiles(latencies),
        per_thread_ops=[inserted],
        throughput_series=_series(dense, interval, n_buckets),
        interval=interval,
    )


def _apply(endpoint, op: WorkloadOp):
    if op.kind is OpKind.GET:
        return endpoint.get(op.key)
    if op.kind is OpKind.PUT:
        return endpoint.put(op.key, op.value)
    return endpoint.delete(op.key)


def run_phase(endpoint, spec: WorkloadSpec, threads: int, duration: float,
              interval=DEFAULT_SAMPLE_INTERVAL, seed=None) -> RunReport:
    """Run ``threads`` independent workers against ``endpoint`` for ``duration`` s.

    Each worker owns a disjoint stream spawned from ``seed`` (default
    ``spec.seed``) and, when ``endpoint`` is a factory, its own connection.
    Counts are bucketed per ``interval`` by completion time; only buckets
    that end within ``duration`` enter the throughput series.
    """
    return run_replicated([endpoint], spec, threads, duration, interval, seed)


def run_replicated(endpoints: Sequence, spec: WorkloadSpec, threads: int, duration: float,
                   interval=DEFAULT_SAMPLE_INTERVAL, seed=None) -> RunReport:
    """Like :func:`run_phase`, with ``threads`` workers per endpoint, all timed together.

    ``per_thread_ops`` lists the workers endpoint by endpoint.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    n_workers = threads * len(endpoints)
    if duration <= 0:
        return RunReport(0, 0.0, 0.0, _percentiles([]), [0] * n_workers, [], interval)

    connects = []
    for ep in endpoints:
        connect = ep if callable(ep) else (lambda ep=ep: ep)
        connects += [connect] * threads
    unbounded = dataclasses.replace(spec, op_count=None)
    root = np.random.SeedSequence(spec.seed if seed is None else seed)
    worker_seeds = root.spawn(n_workers)
    threads = n_workers
    n_buckets = int(math.floor(duration / interval + 1e-9))
    counts = np.zeros((threads, n_buckets + 2), dtype=np.int64)
    totals = [0] * threads
    latencies: list[list[float]] = [[] for _ in range(threads)]
    ends = [0.0] * threads
    status: list[Optional[str]] = ["ok"] * threads
    start_box = {}
    barrier = threading.Barrier(threads + 1, action=lambda: start_box.__setitem__("t0", time.perf_counter()))

    def worker(wid):
        try:
            conn = connects[wid]()
            stream = op_stream(unbounded, seed=worker_seeds[wid])
        except Exception as exc:
            status[wid] = f"connect failed: {exc}"
            barrier.wait()
            return
        barrier.wait()
        t0 = start_box["t0"]
        deadline = t0 + duration
        lat = latencies[wid]
        row = counts[wid]
        done = 0
        try:
            while True:
                if time.perf_counter() >= deadline:
                    break
                op = next(stream)
                s = time.perf_counter()
                _apply(conn, op)
                e = time.perf_counter()
                lat.append((e - s) * 1e6)
                done += 1
                row[min(int((e - t0) / interval), n_buckets + 1)] += 1
        except Exception as exc:
            status[wid] = f"failed after {done} ops: {exc}"
        finally:
            totals[wid] = done
            ends[wid] = time.perf_counter()
            # connections made by a factory belong to the worker
            if all(conn is not ep for ep in endpoints) and hasattr(conn, "close"):
                try:
                    conn.close()
                except Exception:
                    pass

    pool = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(threads)]
    for t in pool:
        t.start()
    barrier.wait()
    for t in pool:
        t.join()

    if any(s != "ok" for s in status):
        raise PartialRunError("run phase worker failure", list(status))

    t0 = start_box["t0"]
    total = int(sum(totals))
    elapsed = max(ends) - t0
    merged = counts.sum(axis=0)
    return RunReport(
        total_ops=total,
        elapsed=elapsed,
        wops=_wops(total, elapsed),
        latency_percentiles=_percentiles([x for lat in latencies for x in lat]),
        per_thread_ops=[int(x) for x in totals],
        throughput_series=_series(merged, interval, n_buckets),
        interval=interval,
    )


class SimulatedEndpoint:
    """In-memory endpoint served at a constant rate by one shared device queue.

    Every operation reserves the next service slot of ``1 / service_rate``
    seconds and sleeps until its slot completes, whatever the number of
    callers.
    """

    def __init__(self, service_rate: float):
        if service_rate <= 0:
            raise ValueError("service_rate must be positive")
        self.period = 1.0 / service_rate
        self._data: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self._next_free = 0.0

    def _serve(self):
        with self._lock:
            now = time.perf_counter()
            self._next_free = max(self._next_free, now) + self.period
            done_at = self._next_free
        delay = done_at - time.perf_counter()
        if delay > 0:
            time.sleep(delay)

    def get(self, key):
        self._serve()
        return self._data.get(key)

    def put(self, key, value):
        self._serve()
        self._data[key] = value

    def delete(self, key):
        self._serve()
        return self._data.pop(key, None) is not None

    def __len__(self):
        return len(self._data)

    def keys(self):
        return set(self._data)
