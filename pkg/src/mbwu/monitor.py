"""Resource and power sampling during runs, and bottleneck inference.

Probes contribute fields to a :class:`UtilizationSample`; a :class:`Sampler`
polls a set of probes from a background thread.  A probe that fails is
marked absent and its fields stay empty; sampling never aborts a run.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import InsufficientDataError

BOTTLENECK_THRESHOLD = 0.9


@dataclass
class UtilizationSample:
    timestamp: float
    cpu: Optional[float] = None
    memory: Optional[float] = None
    device_io: list = field(default_factory=list)
    net_rx: Optional[float] = None
    net_tx: Optional[float] = None
    power: Optional[float] = None

    def to_dict(self):
        return dataclasses.asdict(self)


class Probe:
    """Source of sample fields.  ``read`` returns a partial field dict."""

    name = "probe"

    def read(self) -> dict:
        raise NotImplementedError


class OSProbe(Probe):
    """Kernel accounting counters from ``/proc``.

    CPU and memory are ratios; device and network rates are bytes/s averaged
    since the previous read.  ``devices`` are block device names as listed in
    ``/proc/diskstats``; ``interfaces`` default to every non-loopback NIC.
    """

    name = "os"

    def __init__(self, devices: Sequence[str] = (), interfaces: Optional[Sequence[str]] = None,
                 proc="/proc"):
        self.devices = list(devices)
        self.interfaces = interfaces
        self.proc = Path(proc)
        self._last = None

    def _cpu_times(self):
        with open(self.proc / "stat") as fh:
            parts = fh.readline().split()[1:]
        values = [int(x) for x in parts]
        idle = values[3] + (values[4] if len(values) > 4 else 0)
        return sum(values), idle

    def _memory(self):
        info = {}
        with open(self.proc / "meminfo") as fh:
            for line in fh:
                key, _, rest = line.partition(":")
                info[key] = int(rest.split()[0])
        total = info["MemTotal"]
        return 1.0 - info.get("MemAvailable", info.get("MemFree", 0)) / total

    def _disk_bytes(self):
        found = {}
        with open(self.proc / "diskstats") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) > 9 and parts[2] in self.devices:
                    found[parts[2]] = (int(parts[5]) + int(parts[9])) * 512
        return [found.get(d, 0) for d in self.devices]

    def _net_bytes(self):
        rx = tx = 0
        with open(self.proc / "net" / "dev") as fh:
            for line in fh.readlines()[2:]:
                name, _, rest = line.partition(":")
                name = name.strip()
                if self.interfaces is None and name == "lo":
                    continue
                if self.interfaces is not None and name not in self.interfaces:
                    continue
                cols = rest.split()
                rx += int(cols[0])
                tx += int(cols[8])
        return rx, tx

    def read(self) -> dict:
        now = time.monotonic()
        total, idle = self._cpu_times()
        disk = self._disk_bytes()
        rx, tx = self._net_bytes()
        out = {"memory": min(1.0, max(0.0, self._memory()))}
        if self._last is not None:
            t0, total0, idle0, disk0, rx0, tx0 = self._last
            dt = max(now - t0, 1e-9)
            dtotal = total - total0
            out["cpu"] = min(1.0, max(0.0, 1.0 - (idle - idle0) / dtotal)) if dtotal > 0 else 0.0
            out["device_io"] = [(b - a) / dt for a, b in zip(disk0, disk)]
            out["net_rx"] = (rx - rx0) / dt
            out["net_tx"] = (tx - tx0) / dt
        else:
            out.update(cpu=0.0, device_io=[0.0] * len(disk), net_rx=0.0, net_tx=0.0)
        self._last = (now, total, idle, disk, rx, tx)
        return out


class SimulatedProbe(Probe):
    """Reports the utilization of a simulated steady state.

    Front-end traffic is reported as ``net_rx`` and back-end (storage
    fabric) traffic as ``net_tx``.
    """

    name = "simulated"

    def __init__(self, result, include_power=True):
        self.result = result
        self.include_power = include_power

    def read(self) -> dict:
        r = self.result
        per_device = r.device_bytes_per_s / r.n_attached if r.n_attached else 0.0
        out = {
            "cpu": r.utilization["cpu"],
            "memory": r.utilization["memory"],
            "device_io": [per_device] * r.n_attached,
            "net_rx": r.frontend_bytes_per_s,
            "net_tx": r.backend_bytes_per_s,
        }
        if self.include_power:
            out["power"] = r.power
        return out


class SimulatedPowerMeter(Probe):
    name = "power"

    def __init__(self, watts):
        self.watts = watts

    def read(self) -> dict:
        return {"power": float(self.watts)}


class ReplayProbe(Probe):
    """Plays back a saved sample log, one sample per read."""

    name = "replay"

    def __init__(self, samples_or_path):
        if isinstance(samples_or_path, (str, Path)):
            samples_or_path = read_samples_csv(samples_or_path)
        self._samples = list(samples_or_path)
        self._pos = 0

    def read(self) -> dict:
        if self._pos >= len(self._samples):
            raise EOFError("replay log exhausted")
        s = self._samples[self._pos]
        self._pos += 1
        out = s.to_dict()
        out.pop("timestamp")
        return {k: v for k, v in out.items() if v is not None}


def _collect(probes, absent) -> dict:
    fields = {}
    for probe in probes:
        if probe in absent:
            continue
        try:
            fields.update(probe.read())
        except Exception:
            absent.add(probe)
    return fields


class Sampler:
    """Background sampler; ``stop()`` returns the complete series."""

    def __init__(self, interval: float, probes: Iterable[Probe]):
        if interval <= 0:
            raise ValueError("interval must be positive")
        self.interval = interval
        self.probes = list(probes)
        self.absent: set = set()
        self.samples: list[UtilizationSample] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._t0 = None

    @property
    def absent_probes(self) -> list[str]:
        return sorted(p.name for p in self.absent)

    def start(self) -> "Sampler":
        self._t0 = time.monotonic()
        # prime rate counters so the first logged sample covers one interval
        _collect(self.probes, self.absent)
        self._thread.start()
        return self

    def _loop(self):
        k = 1
        while not self._stop.wait(max(0.0, self._t0 + k * self.interval - time.monotonic())):
            fields = _collect(self.probes, self.absent)
            self.samples.append(UtilizationSample(timestamp=round(k * self.interval, 9), **fields))
            k += 1

    def stop(self) -> list[UtilizationSample]:
        self._stop.set()
        self._thread.join()
        return list(self.samples)


def start_sampling(interval: float, probes: Iterable[Probe]) -> Sampler:
    return Sampler(interval, probes).start()


def synthesize_samples(probes: Iterable[Probe], count: int, interval: float = 1.0):
    """Sample ``probes`` ``count`` times on a virtual clock (no sleeping)."""
    probes = list(probes)
    absent: set = set()
    samples = [UtilizationSample(timestamp=round((k + 1) * interval, 9), **_collect(probes, absent))
               for k in range(count)]
    return samples, sorted(p.name for p in absent)


# -- persistence -----------------------------------------------------------

def _fmt(value):
    return "" if value is None else repr(float(value))


def write_samples_csv(path, samples: Sequence[UtilizationSample]) -> None:
    n_dev = max((len(s.device_io) for s in samples), default=0)
    header = ["t", "cpu", "mem"] + [f"io_dev{i}" for i in range(n_dev)] + ["net_rx", "net_tx", "power"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in samples:
            io = list(s.device_io) + [None] * (n_dev - len(s.device_io))
            w.writerow([repr(float(s.timestamp)), _fmt(s.cpu), _fmt(s.memory)] + [_fmt(x) for x in io]
                       + [_fmt(s.net_rx), _fmt(s.net_tx), _fmt(s.power)])


def read_samples_csv(path) -> list[UtilizationSample]:
    def num(x):
        return None if x == "" else float(x)

    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        io_cols = [i for i, h in enumerate(header) if h.startswith("io_dev")]
        col = {h: i for i, h in enumerate(header)}
        for row in reader:
            out.append(UtilizationSample(
                timestamp=float(row[col["t"]]),
                cpu=num(row[col["cpu"]]),
                memory=num(row[col["mem"]]),
                device_io=[float(row[i]) for i in io_cols if row[i] != ""],
                net_rx=num(row[col["net_rx"]]),
                net_tx=num(row[col["net_tx"]]),
                power=num(row[col["power"]]),
            ))
    return out


# -- summaries -------------------------------------------------------------

@dataclass
class ResourceReport:
    mean: dict
    max: dict
    inferred_bottleneck: str
    segment: tuple
    n_samples: int
    power_present: bool
    raw_mean: dict = field(default_factory=dict)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["segment"] = list(self.segment)
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["segment"] = tuple(data["segment"])
        return cls(**data)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _segment_bounds(segment, n):
    if hasattr(segment, "start") and hasattr(segment, "stop"):
        start, stop = segment.start, segment.stop
    else:
        start, stop = segment
    if not 0 <= start <= stop <= n:
        raise ValueError(f"segment {start}:{stop} outside samples 0:{n}")
    if start == stop:
        raise InsufficientDataError("empty steady segment")
    return start, stop


def _stats(values):
    values = [v for v in values if v is not None]
    if not values:
        return None, None
    return math.fsum(values) / len(values), max(values)


def summarize(samples: Sequence[UtilizationSample], steady_segment, capacities: Optional[dict] = None,
              device_count: Optional[int] = None, connector_cap: Optional[int] = None,
              threshold: float = BOTTLENECK_THRESHOLD) -> ResourceReport:
    """Per-resource mean and max over the steady segment, plus the bottleneck.

    ``capacities`` (bytes/s) turns rates into ratios: ``frontend_net`` for
    ``net_rx``, ``backend_net`` for ``net_tx``, ``device`` for each device's
    I/O.  The bottleneck is the resource with the highest mean utilization
    (ties broken by max).  When no resource reaches ``threshold``, or the
    busiest is the devices themselves, and every connector is populated,
    the connectors are reported instead.
    """
    start, stop = _segment_bounds(steady_segment, len(samples))
    window = samples[start:stop]
    caps = capacities or {}

    series = {"cpu": [s.cpu for s in window], "memory": [s.memory for s in window]}
    if caps.get("frontend_net"):
        series["frontend_net"] = [None if s.net_rx is None else s.net_rx / caps["frontend_net"] for s in window]
    if caps.get("backend_net"):
        series["backend_net"] = [None if s.net_tx is None else s.net_tx / caps["backend_net"] for s in window]
    if caps.get("device"):
        series["device"] = [max(s.device_io) / caps["device"] if s.device_io else None for s in window]

    mean, peak = {}, {}
    for name, values in series.items():
        m, x = _stats(values)
        if m is not None:
            mean[name], peak[name] = m, x

    raw = {}
    for name in ("net_rx", "net_tx", "power"):
        m, _ = _stats([getattr(s, name) for s in window])
        raw[name] = m
    raw["device_io"] = _stats([sum(s.device_io) for s in window if s.device_io])[0]
    power_present = raw["power"] is not None

    if mean:
        busiest = max(mean, key=lambda k: (mean[k], peak[k]))
    else:
        busiest = "unknown"
    full = device_count is not None and connector_cap is not None and device_count >= connector_cap
    if full and (busiest == "device" or not mean or mean[busiest] < threshold):
        busiest = "connectors"

    return ResourceReport(mean=mean, max=peak, inferred_bottleneck=busiest, segment=(start, stop),
                          n_samples=stop - start, power_present=power_present, raw_mean=raw)


def capacities_for(platform, device=None) -> dict:
    """Rate capacities of a simulated platform, for :func:`summarize`."""
    caps = {}
    if platform.frontend_net_bw:
        caps["frontend_net"] = platform.frontend_net_bw
    if platform.backend_net_bw:
        caps["backend_net"] = platform.backend_net_bw
    if device is not None and device.bytes_per_wo_device:
        caps["device"] = device.media_wops * device.bytes_per_wo_device
    return caps
