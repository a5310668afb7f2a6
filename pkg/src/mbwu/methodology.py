"""MBWU measurement: unit sweep, platform sweep, efficiency and savings.

The unit is the peak steady WOPS of a workload on one device with external
caching defeated.  A platform's MBWU count ``M`` is its peak steady WOPS,
under normal caching and with the workload replicated over devices, divided
by that unit.  Efficiency metrics divide platform cost, power and volume by
``M``; savings compare two such reports normalized by the same unit.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (IncomparableResultsError, InsufficientDataError, InvalidSpecError,
                     MeasurementFailedError, UndefinedEfficiencyError)
from .monitor import summarize

STEADY_WINDOW = 5
STEADY_BAND = 0.20
STEADY_SLOPE_LIMIT = 0.10
UNIT_EARLY_STOP = 0.02
UNIT_RETRIES = 1
PLATFORM_EPSILON = 0.02
UNIT_MATCH_RTOL = 1e-9


class _Json:
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, data: dict):
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- steady state ----------------------------------------------------------

@dataclass(frozen=True)
class SteadySegment:
    start: int
    stop: int
    mean: float


def detect_steady_state(series: Sequence[float], window: int = STEADY_WINDOW,
                        band: float = STEADY_BAND,
                        slope_limit: float = STEADY_SLOPE_LIMIT) -> Optional[SteadySegment]:
    """Earliest window of ``window`` points that is flat enough to call steady.

    A window qualifies when its range is within ``band`` of its mean and the
    least-squares trend across it (slope times ``window``) is within
    ``slope_limit`` of its mean.  Returns None when no window qualifies.
    """
    y = np.asarray(series, dtype=np.float64)
    if window < 2:
        raise ValueError("window must be >= 2")
    if len(y) < window:
        raise InsufficientDataError(f"need at least {window} points, got {len(y)}")
    x = np.arange(window, dtype=np.float64)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    for start in range(len(y) - window + 1):
        w = y[start:start + window]
        mean = float(w.mean())
        if not mean > 0:
            continue
        if (w.max() - w.min()) / mean > band:
            continue
        slope = float(xc @ (w - mean)) / sxx
        if abs(slope * window) / mean > slope_limit:
            continue
        return SteadySegment(start, start + window, mean)
    return None


# -- reports ---------------------------------------------------------------

@dataclass
class MbwuUnit(_Json):
    wops: float
    workload_digest: str
    media_id: str
    thread_count_at_peak: int
    evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.wops > 0:
            raise InvalidSpecError("unit wops must be positive")

    def scaled(self, k: float) -> "MbwuUnit":
        return dataclasses.replace(self, wops=self.wops * k)

    def matches(self, workload_digest: str, media_id: str) -> bool:
        return self.workload_digest == workload_digest and self.media_id == media_id


@dataclass
class PlatformResult(_Json):
    M: float
    peak_wops: float
    device_count_at_peak: int
    curve: list
    bottleneck: str
    power_at_peak: Optional[float]
    unit_wops: float
    workload_digest: str = ""
    media_id: str = ""
    points: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["curve"] = [tuple(p) for p in data["curve"]]
        return cls(**data)

    @classmethod
    def from_wops(cls, peak_wops: float, unit: MbwuUnit, **extra) -> "PlatformResult":
        return cls(M=peak_wops / unit.wops, peak_wops=peak_wops,
                   device_count_at_peak=extra.pop("device_count_at_peak", 1),
                   curve=extra.pop("curve", []), bottleneck=extra.pop("bottleneck", "unknown"),
                   power_at_peak=extra.pop("power_at_peak", None), unit_wops=unit.wops,
                   workload_digest=unit.workload_digest, media_id=unit.media_id, **extra)


@dataclass
class EfficiencyReport(_Json):
    M: float
    cost_per_mbwu: float
    power_per_mbwu: float
    space_per_mbwu: float
    unit_wops: Optional[float] = None
    workload_digest: str = ""
    media_id: str = ""
    platform: str = ""


METRICS = ("cost_per_mbwu", "power_per_mbwu", "space_per_mbwu")


@dataclass
class SavingsReport(_Json):
    """Percent reduction of each efficiency metric, candidate against baseline."""

    cost_per_mbwu: float
    power_per_mbwu: float
    space_per_mbwu: float
    baseline: str = ""
    candidate: str = ""


# -- sweeps ----------------------------------------------------------------

def _doubling_schedule(max_threads: int) -> list[int]:
    points, t = [], 1
    while t < max_threads:
        points.append(t)
        t *= 2
    points.append(max_threads)
    return points


def measure_unit(executor, spec, max_threads: Optional[int] = None,
                 early_stop: float = UNIT_EARLY_STOP, window: int = STEADY_WINDOW,
                 band: float = STEADY_BAND, slope_limit: float = STEADY_SLOPE_LIMIT,
                 retries: int = UNIT_RETRIES) -> MbwuUnit:
    """Sweep thread counts on one device with caching defeated; keep the peak.

    Threads double from 1 up to ``max_threads`` (default: the device queue
    depth).  A point that does not settle is re-run up to ``retries`` more
    times.  The sweep stops once two consecutive points each improve by
    less than ``early_stop``.
    """
    if max_threads is None:
        max_threads = executor.queue_depth
    if max_threads < 1:
        raise ValueError("max_threads must be >= 1")

    sweep, diagnostics = [], []
    best, best_report = None, None
    last_value, slow_steps = None, 0
    for threads in _doubling_schedule(max_threads):
        for _ in range(retries + 1):
            run = executor.run(1, threads, caching="defeated")
            values = run.report.series_values
            try:
                seg = detect_steady_state(values, window, band, slope_limit)
            except InsufficientDataError as exc:
                seg = None
                diagnostics.append({"threads": threads, "error": str(exc)})
            if seg is not None:
                break
            diagnostics.append({"threads": threads, "error": "no steady state", "series": values})
        if seg is None:
            sweep.append({"threads": threads, "wops": None, "run_wops": run.report.wops})
            continue
        sweep.append({"threads": threads, "wops": seg.mean, "run_wops": run.report.wops,
                      "steady_start": seg.start})
        if best is None or seg.mean > best[1]:
            best, best_report = (threads, seg.mean), run.report
        if last_value is not None:
            slow_steps = slow_steps + 1 if seg.mean < last_value * (1 + early_stop) else 0
            if slow_steps >= 2:
                break
        last_value = seg.mean

    if best is None:
        raise MeasurementFailedError("no thread count reached steady state", diagnostics)
    return MbwuUnit(
        wops=best[1],
        workload_digest=spec.digest(),
        media_id=executor.media_id,
        thread_count_at_peak=best[0],
        evidence={"peak_run": best_report.to_dict(), "sweep": sweep, "diagnostics": diagnostics},
    )


def _segment_for_samples(seg, n_samples):
    start = min(seg.start, max(n_samples - 1, 0))
    stop = min(seg.stop, n_samples)
    return (start, max(stop, start + 1)) if n_samples else None


def measure_platform(executor, spec, unit: MbwuUnit, max_devices: Optional[int] = None,
                     epsilon: float = PLATFORM_EPSILON, threads: Optional[int] = None,
                     window: int = STEADY_WINDOW, band: float = STEADY_BAND,
                     slope_limit: float = STEADY_SLOPE_LIMIT) -> PlatformResult:
    """Replicate the workload over 1, 2, ... devices under normal caching.

    Stops when the MBWU curve gains less than ``epsilon`` for two
    consecutive device counts.  Points without a steady state are kept as
    annotated errors; the curve is built from the rest.
    """
    if not unit.matches(spec.digest(), executor.media_id):
        raise IncomparableResultsError("unit was measured for a different workload or media")
    cap = executor.connector_cap
    if max_devices is None:
        max_devices = cap
    if max_devices < 1 or max_devices > cap:
        raise InvalidSpecError(f"max_devices must be in 1..{cap}")
    threads = threads or unit.thread_count_at_peak

    points, errors, curve = [], [], []
    best = None
    small_gains = 0
    for n in range(1, max_devices + 1):
        try:
            run = executor.run(n, threads, caching="normal")
        except Exception as exc:
            errors.append({"n_devices": n, "error": str(exc)})
            continue
        values = run.report.series_values
        seg = detect_steady_state(values, window, band, slope_limit) if len(values) >= window else None
        if seg is None:
            errors.append({"n_devices": n, "error": "no steady state"})
            continue
        report = None
        samples_seg = _segment_for_samples(seg, len(run.samples))
        if samples_seg is not None:
            report = summarize(run.samples, samples_seg, run.capacities, n, executor.connector_cap)
        point = {"n_devices": n, "wops": seg.mean, "mbwus": seg.mean / unit.wops,
                 "run_wops": run.report.wops,
                 "power": report.raw_mean.get("power") if report else None,
                 "resources": report.to_dict() if report else None}
        points.append(point)

        previous = curve[-1][1] if curve else 0.0
        if best is None or seg.mean > best["wops"]:
            best = point
        value = best["mbwus"]
        curve.append((n, value))
        if len(curve) > 1:
            small_gains = small_gains + 1 if value - previous < epsilon else 0
            if small_gains >= 2:
                break

    if best is None:
        raise MeasurementFailedError("no device count reached steady state", errors)
    resources = best["resources"] or {}
    return PlatformResult(
        M=best["wops"] / unit.wops,
        peak_wops=best["wops"],
        device_count_at_peak=best["n_devices"],
        curve=curve,
        bottleneck=resources.get("inferred_bottleneck", "unknown"),
        power_at_peak=best["power"],
        unit_wops=unit.wops,
        workload_digest=unit.workload_digest,
        media_id=unit.media_id,
        points=points,
        errors=errors,
    )


# -- efficiency ------------------------------------------------------------

def efficiency(platform, result, power_source: str = "platform") -> EfficiencyReport:
    """Cost, power (kW) and volume per MBWU.

    ``result`` is a :class:`PlatformResult` or a bare MBWU count.  Power uses
    the platform's amps and volts unless ``power_source="measured"``, which
    takes the metered watts at peak.
    """
    if isinstance(result, PlatformResult):
        M = result.M
        meta = {"unit_wops": result.unit_wops, "workload_digest": result.workload_digest,
                "media_id": result.media_id}
    else:
        M, meta = float(result), {}
    if not M > 0:
        raise UndefinedEfficiencyError(f"efficiency is undefined for M={M}")
    if power_source == "measured":
        if not isinstance(result, PlatformResult) or result.power_at_peak is None:
            raise ValueError("no metered power available")
        kw = result.power_at_peak / (1000.0 * M)
    elif power_source == "platform":
        kw = platform.amps * platform.volts / (1000.0 * M)
    else:
        raise ValueError(f"unknown power_source {power_source!r}")
    return EfficiencyReport(
        M=M,
        cost_per_mbwu=platform.cost / M,
        power_per_mbwu=kw,
        space_per_mbwu=platform.volume / M,
        platform=getattr(platform, "name", ""),
        **meta,
    )


def _reduction(base, cand):
    if base == 0:
        return math.nan
    return 100.0 * (1.0 - cand / base)


def compare(baseline: EfficiencyReport, candidate: EfficiencyReport) -> SavingsReport:
    """Percent reduction of each metric going from ``baseline`` to ``candidate``.

    Negative values mean the candidate is worse; they are not clamped.
    """
    if baseline.workload_digest != candidate.workload_digest or baseline.media_id != candidate.media_id:
        raise IncomparableResultsError("reports were measured for different workloads or media")
    bu, cu = baseline.unit_wops, candidate.unit_wops
    if (bu is None) != (cu is None) or (bu is not None and not math.isclose(bu, cu, rel_tol=UNIT_MATCH_RTOL)):
        raise IncomparableResultsError(f"reports use different MBWU units ({bu} vs {cu})")
    return SavingsReport(
        **{m: _reduction(getattr(baseline, m), getattr(candidate, m)) for m in METRICS},
        baseline=baseline.platform,
        candidate=candidate.platform,
    )
