"""Campaign orchestration: precondition, unit, platform, efficiency, reports.

A campaign writes every artifact under its ``output_dir`` and finishes by
writing ``manifest.json``, which lists each file with its SHA-256.  A failed
stage still leaves a manifest, marked failed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (ConfigError, IncomparableResultsError, IncompleteCampaignError,
                     PreconditionError, SafetyRefusalError)
from .executors import LiveExecutor, SimulatedExecutor
from .kvstore.engine import StoreOptions
from .methodology import MbwuUnit, PlatformResult, efficiency, measure_platform, measure_unit
from .monitor import write_samples_csv
from .simulator import Bundle, PlatformSpec, load_bundle
from .workload import WorkloadSpec

log = logging.getLogger(__name__)

PRECONDITION_MODES = ("purge_only", "purge_and_fill")
PLOT_FILES = {
    "mbwu_vs_devices.csv": "platform_result.json",
    "wops_vs_threads.csv": "unit.json",
    "watts_vs_devices.csv": "platform_result.json",
}
_CHUNK = 1 << 20


# -- preconditioning -------------------------------------------------------

def _device_size(fd):
    size = os.fstat(fd).st_size
    if size == 0:
        size = os.lseek(fd, 0, os.SEEK_END)
        os.lseek(fd, 0, os.SEEK_SET)
    return size


def _overwrite(fd, size, pattern):
    os.lseek(fd, 0, os.SEEK_SET)
    written = 0
    while written < size:
        n = min(_CHUNK, size - written)
        written += os.write(fd, pattern(n))
    os.fsync(fd)


def precondition(devices, mode="purge_and_fill", confirm=False, simulated=False, seed=0) -> dict:
    """Purge, then optionally fill, each device with workload-independent data.

    Purging overwrites the whole device with zeros; filling then writes it
    once sequentially with a seeded pseudo-random pattern.  This is
    destructive and refuses to run unless ``confirm`` is true.  The
    simulated backend has no media, so it only returns a no-op report.
    """
    if mode not in PRECONDITION_MODES:
        raise ConfigError(f"mode must be one of {PRECONDITION_MODES}")
    if simulated:
        log.info("simulated backend: preconditioning is a no-op")
        return {"mode": mode, "backend": "simulated", "noop": True, "devices": []}
    if not confirm:
        raise SafetyRefusalError("preconditioning destroys device contents; pass confirmation to proceed")

    rng = np.random.default_rng(seed)
    zeros = bytes(_CHUNK)
    report = {"mode": mode, "backend": "live", "noop": False, "devices": []}
    for path in devices:
        entry = {"path": str(path), "status": "ok"}
        report["devices"].append(entry)
        try:
            fd = os.open(path, os.O_WRONLY)
        except OSError as exc:
            entry["status"] = f"failed: {exc}"
            raise PreconditionError(f"cannot open {path}: {exc}", report) from exc
        try:
            size = _device_size(fd)
            entry["size"] = size
            t = time.monotonic()
            _overwrite(fd, size, lambda n: zeros[:n])
            entry["purge_s"] = time.monotonic() - t
            if mode == "purge_and_fill":
                t = time.monotonic()
                _overwrite(fd, size, rng.bytes)
                entry["fill_s"] = time.monotonic() - t
        except OSError as exc:
            entry["status"] = f"failed: {exc}"
            raise PreconditionError(f"preconditioning {path} failed: {exc}", report) from exc
        finally:
            os.close(fd)
    return report


# -- configuration ---------------------------------------------------------

def _resolve(base: Path, value):
    if value is None or isinstance(value, dict):
        return value
    p = Path(value)
    return p if p.is_absolute() else base / p


def _load_obj(base, value, loader, what):
    if value is None:
        return None
    if isinstance(value, dict):
        return loader(value)
    path = _resolve(base, value)
    try:
        with open(path) as fh:
            return loader(json.load(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"{what} file not found: {path}") from exc


@dataclass
class CampaignConfig:
    workload: WorkloadSpec
    backend: dict
    output_dir: Path
    platform: Optional[PlatformSpec] = None
    unit_source: object = "measure"
    max_threads: Optional[int] = None
    max_devices: Optional[int] = None
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "CampaignConfig":
        base = Path(base_dir or Path.cwd())
        try:
            backend = dict(data["backend"])
            kind = backend.get("kind")
            if kind not in ("simulated", "live"):
                raise ConfigError("backend.kind must be 'simulated' or 'live'")
            unit_source = data.get("unit_source", "measure")
            if isinstance(unit_source, dict):
                if set(unit_source) != {"reuse"}:
                    raise ConfigError("unit_source must be 'measure' or {'reuse': PATH}")
                unit_source = {"reuse": str(_resolve(base, unit_source["reuse"]))}
            elif unit_source != "measure":
                raise ConfigError("unit_source must be 'measure' or {'reuse': PATH}")
            return cls(
                workload=_load_obj(base, data["workload"], WorkloadSpec.from_dict, "workload"),
                backend=backend,
                output_dir=Path(_resolve(base, data["output_dir"])),
                platform=_load_obj(base, data.get("platform"), PlatformSpec.from_dict, "platform"),
                unit_source=unit_source,
                max_threads=data.get("max_threads"),
                max_devices=data.get("max_devices"),
                base_dir=base,
            )
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, overrides=None) -> "CampaignConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for key, value in (overrides or {}).items():
            _set_dotted(data, key, value)
        return cls.from_dict(data, base_dir=path.parent)

    def bundle(self, key="bundle") -> Optional[Bundle]:
        value = self.backend.get(key)
        if value is None:
            return None
        if isinstance(value, dict):
            return Bundle.from_dict(value)
        try:
            return load_bundle(value if not str(value).endswith(".json") else _resolve(self.base_dir, value))
        except FileNotFoundError as exc:
            raise ConfigError(f"bundle not found: {value}") from exc

    def to_dict(self) -> dict:
        return {
            "workload": self.workload.to_dict(),
            "backend": self.backend,
            "output_dir": str(self.output_dir),
            "platform": self.platform.to_dict() if self.platform else None,
            "unit_source": self.unit_source,
            "max_threads": self.max_threads,
            "max_devices": self.max_devices,
        }


def _set_dotted(data: dict, key: str, value):
    parts = key.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


# -- campaign --------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


@contextmanager
def _campaign_lock(output_dir: Path):
    lock = output_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"another campaign holds {lock}") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


class _Recorder:
    """Wraps an executor and keeps every measurement it returns."""

    def __init__(self, inner):
        self.inner = inner
        self.runs = {}

    def __getattr__(self, name):
        return getattr(self.inner, name)

    def run(self, n_devices, threads, caching="normal"):
        m = self.inner.run(n_devices, threads, caching)
        self.runs[(n_devices, threads, caching)] = m
        return m


class _Artifacts:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def json(self, name, obj):
        (self.root / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        self.files.append(name)

    def add(self, name):
        self.files.append(name)

    def manifest(self, status, stage=None, error=None):
        entries = [{"file": f, "sha256": _sha256(self.root / f)} for f in sorted(set(self.files))]
        data = {"status": status, "files": entries}
        if stage:
            data["failed_stage"] = stage
            data["error"] = error
        (self.root / "manifest.json").write_text(json.dumps(data, indent=2) + "\n")
        return data


def _simulated_executors(config: CampaignConfig):
    b = config.backend
    bundle = config.bundle("bundle")
    if bundle is None:
        raise ConfigError("simulated backend needs a 'bundle'")
    kw = {k: b[k] for k in ("seed", "interval", "warmup", "steady_samples", "noise") if k in b}
    unit_bundle = config.bundle("unit_bundle")
    unit_exec = SimulatedExecutor(unit_bundle, **kw) if unit_bundle else SimulatedExecutor.ideal_host(bundle, **kw)
    return unit_exec, SimulatedExecutor(bundle, **kw), bundle.platform


def _live_executor(config: CampaignConfig, daemons: list):
    from .kvstore.server import KVDaemon

    b = config.backend
    endpoints = list(b.get("endpoints", []))
    for data_dir in b.get("spawn_daemons", []):
        path = _resolve(config.base_dir, data_dir)
        Path(path).mkdir(parents=True, exist_ok=True)
        d = KVDaemon("127.0.0.1:0", path).start()
        daemons.append(d)
        endpoints.append(d.address)
    if not endpoints:
        raise ConfigError("live backend needs 'endpoints' or 'spawn_daemons'")
    options = _load_obj(config.base_dir, b.get("store_options"), StoreOptions.from_dict, "store options")
    ex = LiveExecutor(endpoints, config.workload, duration=b.get("duration", 10.0),
                      interval=b.get("interval", 1.0), queue_depth=b.get("queue_depth", 32),
                      media_id=b.get("media_id", "live-device"), store_options=options,
                      connectors=b.get("connectors"))
    return ex


def _reused_unit(config: CampaignConfig) -> Optional[MbwuUnit]:
    if not isinstance(config.unit_source, dict):
        return None
    path = Path(config.unit_source["reuse"])
    try:
        unit = MbwuUnit.from_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"unit file not found: {path}") from exc
    if unit.workload_digest != config.workload.digest():
        raise IncomparableResultsError(
            f"unit {path} was measured for workload {unit.workload_digest[:12]}, "
            f"campaign workload is {config.workload.digest()[:12]}")
    return unit


def run_campaign(config: CampaignConfig) -> dict:
    """Execute the full pipeline and return the artifact paths by name."""
    reused = _reused_unit(config)
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    arts = _Artifacts(out)
    stage = "setup"
    daemons = []
    with _campaign_lock(out):
        try:
            arts.json("config.json", config.to_dict())
            arts.json("workload.json", config.workload.to_dict())

            if config.backend["kind"] == "simulated":
                unit_exec, plat_exec, platform = _simulated_executors(config)
                stage = "precondition"
                arts.json("precondition.json", precondition([], simulated=True))
            else:
                stage = "precondition"
                pre = config.backend.get("precondition")
                if pre:
                    arts.json("precondition.json", precondition(
                        [_resolve(config.base_dir, d) for d in pre.get("devices", [])],
                        pre.get("mode", "purge_and_fill"), bool(pre.get("confirm"))))
                plat_exec = _live_executor(config, daemons)
                unit_exec = plat_exec
                platform = None
            platform = config.platform or platform
            if platform is None:
                raise ConfigError("a platform spec is required for the efficiency report")
            arts.json("platform.json", platform.to_dict())

            stage = "unit"
            if reused is not None:
                if reused.media_id != unit_exec.media_id:
                    raise IncomparableResultsError("reused unit was measured on different media")
                unit = reused
            else:
                recorder = _Recorder(unit_exec)
                unit = measure_unit(recorder, config.workload, config.max_threads)
                peak = recorder.runs[(1, unit.thread_count_at_peak, "defeated")]
                peak.report.series_to_csv(out / "unit_throughput.csv")
                arts.add("unit_throughput.csv")
            arts.json("unit.json", unit.to_dict())

            stage = "platform"
            recorder = _Recorder(plat_exec)
            result = measure_platform(recorder, config.workload, unit, config.max_devices)
            for (n, _threads, _caching), m in sorted(recorder.runs.items()):
                if m.samples:
                    write_samples_csv(out / f"samples_n{n}.csv", m.samples)
                    arts.add(f"samples_n{n}.csv")
            arts.json("platform_result.json", result.to_dict())

            stage = "efficiency"
            report = efficiency(platform, result)
            arts.json("efficiency.json", report.to_dict())

            stage = "plots"
            for name in emit_plots(out):
                arts.add(Path(name).name)
            arts.manifest("complete")
        except BaseException as exc:
            arts.manifest("failed", stage, f"{type(exc).__name__}: {exc}")
            raise
        finally:
            for d in daemons:
                d.shutdown()
    return {name: str(out / name) for name in arts.files + ["manifest.json"]}


# -- plot data -------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def emit_plots(campaign_dir, out_dir=None) -> list[str]:
    """Write the throughput and power CSVs of a completed campaign."""
    root = Path(campaign_dir)
    out = Path(out_dir) if out_dir else root
    missing = [f"{name} (needs {src})" for name, src in PLOT_FILES.items() if not (root / src).exists()]
    if missing:
        raise IncompleteCampaignError(missing)
    result = PlatformResult.from_json(root / "platform_result.json")
    unit = MbwuUnit.from_json(root / "unit.json")
    out.mkdir(parents=True, exist_ok=True)

    def bottleneck(p):
        return (p.get("resources") or {}).get("inferred_bottleneck", "")

    def fmt(v):
        return "" if v is None else repr(float(v))

    _write_csv(out / "mbwu_vs_devices.csv", ["n_devices", "wops", "mbwus", "watts", "binding_resource"],
               [[p["n_devices"], fmt(p["wops"]), fmt(p["mbwus"]), fmt(p["power"]), bottleneck(p)]
                for p in result.points])
    _write_csv(out / "wops_vs_threads.csv", ["threads", "wops"],
               [[s["threads"], fmt(s["wops"])] for s in unit.evidence.get("sweep", [])])
    _write_csv(out / "watts_vs_devices.csv", ["n_devices", "watts"],
               [[p["n_devices"], fmt(p["power"])] for p in result.points])
    return [str(out / name) for name in PLOT_FILES]
