"""Run backends for the measurement sweeps.

An executor runs ``n_devices`` workload/device pairs with ``threads``
workers each and returns a :class:`Measurement`: the aggregate run report
plus the utilization samples taken meanwhile.

``SimulatedExecutor`` derives both from the analytic platform model, on a
virtual clock.  ``LiveExecutor`` drives real key-value daemons.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kvstore.client import KVClient, connector
from .kvstore.engine import StoreOptions
from .monitor import OSProbe, SimulatedProbe, capacities_for, start_sampling, synthesize_samples
from .simulator import Bundle, PlatformSpec, SimResult
from .workload import RunReport, WorkloadSpec, load_phase, run_replicated

CACHING_MODES = ("defeated", "normal")


@dataclass
class Measurement:
    report: RunReport
    samples: list = field(default_factory=list)
    capacities: dict = field(default_factory=dict)
    absent_probes: list = field(default_factory=list)
    caching: str = "normal"


def _check_caching(caching):
    if caching not in CACHING_MODES:
        raise ValueError(f"caching must be one of {CACHING_MODES}")


def _split(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


class SimulatedExecutor:
    """Synthesizes runs from a simulator bundle.

    Each run is a warm-up ramp of ``warmup`` samples followed by
    ``steady_samples`` samples at the modeled throughput with bounded
    multiplicative noise.  Per-device throughput also scales with worker
    threads up to ``saturation_threads`` (default: 5/8 of the queue depth,
    where the modeled device saturates).

    Caching mode is recorded but does not change the model: the simulator
    gives no throughput benefit from caching in either mode.
    """

    def __init__(self, bundle: Bundle, seed: int = 0, interval: float = 1.0, warmup: int = 5,
                 steady_samples: int = 10, noise: float = 0.005,
                 saturation_threads: Optional[float] = None):
        self.bundle = bundle
        self.seed = seed
        self.interval = interval
        self.warmup = warmup
        self.steady_samples = steady_samples
        self.noise = noise
        self.saturation_threads = saturation_threads or max(1.0, 0.625 * bundle.device.queue_depth)

    @classmethod
    def ideal_host(cls, bundle: Bundle, **kwargs) -> "SimulatedExecutor":
        """Executor for the same device on a platform that never limits it."""
        ideal = dataclasses.replace(bundle, platform=PlatformSpec.unlimited(), name="ideal-host")
        return cls(ideal, **kwargs)

    @property
    def media_id(self) -> str:
        return self.bundle.device.media_id

    @property
    def queue_depth(self) -> int:
        return self.bundle.device.queue_depth

    @property
    def connector_cap(self) -> int:
        return self.bundle.connector_cap

    def target_wops(self, n_devices: int, threads: int) -> tuple[float, SimResult]:
        result = self.bundle.simulate(n_devices)
        thread_factor = min(1.0, threads / self.saturation_threads)
        return min(result.wops, result.terms["device"] * thread_factor), result

    def _at(self, result: SimResult, wops: float) -> SimResult:
        ratio = wops / result.wops
        util = dict(result.utilization)
        for name in ("device", "cpu", "frontend_net", "backend_net"):
            util[name] = min(1.0, util[name] * ratio)
        p = self.bundle.platform
        busiest = max(util[name] for name in ("device", "cpu", "frontend_net", "backend_net"))
        power = p.power_idle + (p.power_peak - p.power_idle) * busiest \
            + result.n_attached * self.bundle.device.power_active
        return dataclasses.replace(
            result, wops=wops, utilization=util, power=power,
            frontend_bytes_per_s=result.frontend_bytes_per_s * ratio,
            backend_bytes_per_s=result.backend_bytes_per_s * ratio,
            device_bytes_per_s=result.device_bytes_per_s * ratio,
        )

    def run(self, n_devices: int, threads: int, caching: str = "normal") -> Measurement:
        _check_caching(caching)
        target, result = self.target_wops(n_devices, threads)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, n_devices, threads]))
        ramp = [target * (k + 1) / (self.warmup + 1) for k in range(self.warmup)]
        steady = target * (1.0 + self.noise * rng.uniform(-1.0, 1.0, self.steady_samples))
        values = ramp + list(steady)
        ops = [int(round(v * self.interval)) for v in values]

        total = sum(ops)
        elapsed = len(ops) * self.interval
        workers = n_devices * threads
        mean_latency_us = workers / target * 1e6
        report = RunReport(
            total_ops=total,
            elapsed=elapsed,
            wops=total / elapsed,
            latency_percentiles={"p50": mean_latency_us * math.log(2),
                                 "p95": mean_latency_us * math.log(20),
                                 "p99": mean_latency_us * math.log(100)},
            per_thread_ops=_split(total, workers),
            throughput_series=[(round((i + 1) * self.interval, 9), c) for i, c in enumerate(ops)],
            interval=self.interval,
        )
        samples = []
        for i, v in enumerate(values):
            s, _ = synthesize_samples([SimulatedProbe(self._at(result, v))], 1, self.interval)
            s[0].timestamp = round((i + 1) * self.interval, 9)
            samples.append(s[0])
        return Measurement(report, samples, capacities_for(self.bundle.platform, self.bundle.device),
                           [], caching)


class LiveExecutor:
    """Drives key-value daemons, one per device, over the network.

    Records are loaded into a daemon the first time it is used.  With
    caching defeated, each run reopens the store with no value cache and
    asks the daemon to evict the log from the OS page cache first.
    """

    def __init__(self, endpoints: Sequence[str], spec: WorkloadSpec, duration: float = 10.0,
                 interval: float = 1.0, queue_depth: int = 32, media_id: str = "live-device",
                 store_options: Optional[StoreOptions] = None, probes=None, connectors=None,
                 sample_interval: Optional[float] = None):
        if not endpoints:
            raise ValueError("at least one endpoint is required")
        self.endpoints = list(endpoints)
        self.spec = spec
        self.duration = duration
        self.interval = interval
        self.queue_depth = queue_depth
        self.media_id = media_id
        self.store_options = store_options or StoreOptions()
        self.probes = probes if probes is not None else [OSProbe()]
        self.connector_cap = connectors or len(self.endpoints)
        self.sample_interval = sample_interval or interval
        self._loaded = set()
        self.load_reports = {}

    def _options(self, caching):
        if caching == "defeated":
            return dataclasses.replace(self.store_options, memory_budget=0)
        return self.store_options

    def ensure_loaded(self, n_devices: int):
        for address in self.endpoints[:n_devices]:
            if address in self._loaded:
                continue
            with KVClient(address) as client:
                client.open(self.store_options)
                if client.status().get("records", 0) < self.spec.record_count:
                    self.load_reports[address] = load_phase(client, self.spec).to_dict()
            self._loaded.add(address)

    def run(self, n_devices: int, threads: int, caching: str = "normal") -> Measurement:
        _check_caching(caching)
        if n_devices > len(self.endpoints):
            raise ValueError(f"only {len(self.endpoints)} endpoints configured")
        self.ensure_loaded(n_devices)
        options = self._options(caching)
        addresses = self.endpoints[:n_devices]
        if caching == "defeated":
            for address in addresses:
                with KVClient(address) as client:
                    client.status("drop-cache")
        sampler = start_sampling(self.sample_interval, self.probes)
        try:
            report = run_replicated([connector(a, options) for a in addresses], self.spec, threads,
                                    self.duration, self.interval,
                                    seed=[self.spec.seed, n_devices, threads])
        finally:
            samples = sampler.stop()
        return Measurement(report, samples, {}, sampler.absent_probes, caching)

    def write_amplification(self, address=None) -> float:
        with KVClient(address or self.endpoints[0]) as client:
            value = client.status().get("write_amplification")
        return math.nan if value is None else float(value)
