"""Analytic model of a platform serving N replicated workload/device pairs.

Throughput is the minimum of the caps each resource imposes (devices, CPU,
front-end network, back-end network), after the connector count has limited
how many devices are attached.  CPU cost per operation grows once the
replicas' working sets overflow platform memory.  Every function is pure.

Capacities given as ``None`` (JSON ``null``) are unlimited.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import InvalidSpecError

RESOURCES = ("device", "cpu", "frontend_net", "backend_net", "memory", "connectors")
DEFAULT_BETA = 1.0


def _cap(value):
    return math.inf if value is None else float(value)


class _JsonMixin:
    @classmethod
    def from_dict(cls, data: dict):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidSpecError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {k: (v.value if isinstance(v, enum.Enum) else v)
                for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DeviceSpec(_JsonMixin):
    media_wops: float
    queue_depth: int = 32
    cost: float = 0.0
    power_active: float = 0.0
    bytes_per_wo_device: float = 0.0
    media_id: str = "device"

    def __post_init__(self):
        if not self.media_wops > 0:
            raise InvalidSpecError("media_wops must be positive")
        if self.queue_depth < 1:
            raise InvalidSpecError("queue_depth must be >= 1")


@dataclass(frozen=True)
class PlatformSpec(_JsonMixin):
    cpu_capacity: Optional[float] = None
    mem_capacity: Optional[float] = None
    connectors: int = 1
    frontend_net_bw: Optional[float] = None
    backend_net_bw: Optional[float] = None
    cost: float = 0.0
    volume: float = 0.0
    power_idle: float = 0.0
    power_peak: float = 0.0
    amps: float = 0.0
    volts: float = 0.0
    name: str = "platform"

    def __post_init__(self):
        if self.connectors < 1:
            raise InvalidSpecError("connectors must be >= 1")
        if self.power_idle > self.power_peak:
            raise InvalidSpecError("power_idle must not exceed power_peak")
        for name in ("cpu_capacity", "mem_capacity", "frontend_net_bw", "backend_net_bw"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidSpecError(f"{name} must be positive (use null for unlimited)")
        if self.power_peak > 0 and self.amps * self.volts > 0:
            if abs(self.amps * self.volts - self.power_peak) > 0.01 * self.power_peak:
                raise InvalidSpecError("amps x volts must be within 1% of power_peak")

    @classmethod
    def unlimited(cls, connectors=1 << 20) -> "PlatformSpec":
        """A platform that never limits throughput (the ideal unit-measurement host)."""
        return cls(connectors=connectors, name="ideal-host")


@dataclass(frozen=True)
class WorkloadDemand(_JsonMixin):
    cpu_cycles_per_wo: float = 0.0
    mem_per_device: float = 0.0
    bytes_per_wo_frontend: float = 0.0
    amplification: float = 1.0
    net_cpu_cycles_per_wo: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise InvalidSpecError(f"{f.name} must be >= 0")
        if self.amplification < 1:
            raise InvalidSpecError("amplification must be >= 1")


class ScenarioKind(str, enum.Enum):
    INTEGRATED = "integrated"
    NETWORK = "network"
    DISAGGREGATED = "disaggregated"


@dataclass(frozen=True)
class Scenario(_JsonMixin):
    kind: ScenarioKind = ScenarioKind.INTEGRATED
    connector_override: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.connector_override is not None and self.connector_override < 1:
            raise InvalidSpecError("connector_override must be >= 1")


@dataclass(frozen=True)
class SimResult:
    wops: float
    utilization: dict
    power: float
    binding_resource: str
    n_devices: int
    n_attached: int
    terms: dict = field(default_factory=dict)
    frontend_bytes_per_s: float = 0.0
    backend_bytes_per_s: float = 0.0
    device_bytes_per_s: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Bundle:
    """Platform, device, demand and scenario describing one simulated setup."""

    platform: PlatformSpec
    device: DeviceSpec
    demand: WorkloadDemand
    scenario: Scenario
    name: str = ""
    note: str = ""
    beta: float = DEFAULT_BETA

    @classmethod
    def from_dict(cls, data: dict) -> "Bundle":
        return cls(
            platform=PlatformSpec.from_dict(data["platform"]),
            device=DeviceSpec.from_dict(data["device"]),
            demand=WorkloadDemand.from_dict(data.get("demand", {})),
            scenario=Scenario.from_dict(data.get("scenario", {})),
            name=data.get("name", ""),
            note=data.get("note", ""),
            beta=data.get("beta", DEFAULT_BETA),
        )

    @classmethod
    def from_file(cls, path) -> "Bundle":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"name": self.name, "note": self.note, "beta": self.beta,
                "platform": self.platform.to_dict(), "device": self.device.to_dict(),
                "demand": self.demand.to_dict(), "scenario": self.scenario.to_dict()}

    @property
    def connector_cap(self) -> int:
        return effective_connectors(self.platform, self.scenario)

    def simulate(self, n_devices: int) -> SimResult:
        return simulate(self.platform, self.device, self.demand, self.scenario, n_devices, self.beta)

    def curve(self, n_max: Optional[int] = None):
        return mbwu_curve(self.platform, self.device, self.demand, self.scenario,
                          n_max or self.connector_cap, self.beta)


CALIBRATIONS = ("host_integrated", "host_network", "host_disaggregated",
                "embedded_integrated", "embedded_network", "embedded_disaggregated")


def calibration_path(name: str) -> Path:
    return Path(str(resources.files("mbwu") / "calibration" / f"{name}.json"))


def load_calibration(name: str) -> Bundle:
    """Load one of the shipped calibration bundles (see ``CALIBRATIONS``)."""
    return Bundle.from_file(calibration_path(name))


def load_bundle(path_or_name) -> Bundle:
    if str(path_or_name) in CALIBRATIONS:
        return load_calibration(str(path_or_name))
    return Bundle.from_file(path_or_name)


def memory_pressure_factor(platform: PlatformSpec, demand: WorkloadDemand, n_devices: int,
                           beta: float = DEFAULT_BETA) -> float:
    """CPU-cost multiplier from memory overcommit.

    1 while the replicas' working sets fit in memory, then grows linearly
    with the relative overshoot, scaled by ``beta``.
    """
    if n_devices < 1:
        raise InvalidSpecError("n_devices must be >= 1")
    capacity = _cap(platform.mem_capacity)
    need = n_devices * demand.mem_per_device
    if need <= capacity:
        return 1.0
    return 1.0 + beta * (need - capacity) / capacity


def effective_connectors(platform: PlatformSpec, scenario: Scenario) -> int:
    if scenario.connector_override is not None:
        return scenario.connector_override
    return platform.connectors


def cpu_cost_per_wo(platform, demand, scenario, n_attached, beta=DEFAULT_BETA) -> float:
    base = demand.cpu_cycles_per_wo
    if scenario.kind is not ScenarioKind.INTEGRATED:
        base += demand.net_cpu_cycles_per_wo
    return base * memory_pressure_factor(platform, demand, n_attached, beta)


def resource_caps(platform, device, demand, scenario, n_devices, beta=DEFAULT_BETA) -> dict:
    """Throughput cap (WOPS) imposed by each active resource."""
    if n_devices < 1:
        raise InvalidSpecError("n_devices must be >= 1")
    n_att = min(n_devices, effective_connectors(platform, scenario))
    caps = {"device": n_att * device.media_wops}
    cost = cpu_cost_per_wo(platform, demand, scenario, n_att, beta)
    caps["cpu"] = _cap(platform.cpu_capacity) / cost if cost > 0 else math.inf
    if scenario.kind is not ScenarioKind.INTEGRATED and demand.bytes_per_wo_frontend > 0:
        caps["frontend_net"] = _cap(platform.frontend_net_bw) / demand.bytes_per_wo_frontend
    if scenario.kind is ScenarioKind.DISAGGREGATED and demand.bytes_per_wo_frontend > 0:
        caps["backend_net"] = _cap(platform.backend_net_bw) / (
            demand.bytes_per_wo_frontend * demand.amplification)
    return caps


def simulate(platform: PlatformSpec, device: DeviceSpec, demand: WorkloadDemand,
             scenario: Scenario, n_devices: int, beta: float = DEFAULT_BETA) -> SimResult:
    """Steady-state WOPS, utilizations and power of ``n_devices`` replicas.

    ``binding_resource`` is the resource with the smallest cap; ties resolve
    in the order device, cpu, frontend_net, backend_net.
    """
    caps = resource_caps(platform, device, demand, scenario, n_devices, beta)
    # dict order is the tie-break order; min() keeps the first minimum
    binding = min(caps, key=caps.__getitem__)
    wops = caps[binding]
    if not math.isfinite(wops):
        raise InvalidSpecError("no finite resource cap")

    C = effective_connectors(platform, scenario)
    n_att = min(n_devices, C)
    util = {name: (wops / cap if math.isfinite(cap) else 0.0) for name, cap in caps.items()}
    util.setdefault("frontend_net", 0.0)
    util.setdefault("backend_net", 0.0)
    mem_cap = _cap(platform.mem_capacity)
    util["memory"] = min(1.0, n_att * demand.mem_per_device / mem_cap) if math.isfinite(mem_cap) else 0.0
    util["connectors"] = n_att / C
    util = {name: util[name] for name in RESOURCES}

    busiest = max(util[name] for name in ("device", "cpu", "frontend_net", "backend_net"))
    power = (platform.power_idle + (platform.power_peak - platform.power_idle) * busiest
             + n_att * device.power_active)
    frontend = wops * demand.bytes_per_wo_frontend
    backend = frontend * demand.amplification if scenario.kind is ScenarioKind.DISAGGREGATED else 0.0
    return SimResult(
        wops=wops,
        utilization=util,
        power=power,
        binding_resource=binding,
        n_devices=n_devices,
        n_attached=n_att,
        terms=caps,
        frontend_bytes_per_s=frontend if scenario.kind is not ScenarioKind.INTEGRATED else 0.0,
        backend_bytes_per_s=backend,
        device_bytes_per_s=wops * device.bytes_per_wo_device,
    )


def mbwu_curve(platform, device, demand, scenario, n_max, beta=DEFAULT_BETA) -> list[tuple[int, float]]:
    """Platform MBWUs reachable with up to ``n`` devices, for n = 1..n_max.

    The unit is ``device.media_wops``.  Each point is the best throughput
    over 1..n attached replicas, so the curve never decreases even where
    memory pressure makes an extra replica counterproductive.
    """
    if n_max < 1:
        raise InvalidSpecError("n_max must be >= 1")
    curve, best = [], 0.0
    for n in range(1, n_max + 1):
        best = max(best, simulate(platform, device, demand, scenario, n, beta).wops / device.media_wops)
        curve.append((n, best))
    return curve


def plateau(curve) -> float:
    return curve[-1][1]


def bottleneck_of(result: SimResult, n_devices: Optional[int] = None,
                  connector_cap: Optional[int] = None) -> str:
    """Platform-level bottleneck of a simulated run.

    A device-bound run that already uses every connector is limited by the
    connectors: more media would help, but cannot be attached.
    """
    n = result.n_devices if n_devices is None else n_devices
    if connector_cap is None:
        connector_cap = round(result.n_attached / result.utilization["connectors"])
    if result.binding_resource == "device" and n >= connector_cap:
        return "connectors"
    return result.binding_resource


def curve_rows(platform, device, demand, scenario, n_max, beta=DEFAULT_BETA) -> list[dict]:
    """Curve points for CSV export.

    Columns are n_devices, wops, mbwus, watts, binding_resource; watts and
    binding_resource describe the replica count that achieves the point.
    """
    rows, best = [], None
    for n in range(1, n_max + 1):
        r = simulate(platform, device, demand, scenario, n, beta)
        if best is None or r.wops > best.wops:
            best = r
        rows.append({"n_devices": n, "wops": best.wops, "mbwus": best.wops / device.media_wops,
                     "watts": best.power, "binding_resource": best.binding_resource})
    return rows
