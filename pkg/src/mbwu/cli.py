"""Command-line entry point: ``mbwu <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 measurement failure,
4 safety refusal.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import campaign as camp
from .errors import (AbortedLoadError, ConfigError, IncomparableResultsError, IncompleteCampaignError,
                     InvalidSpecError, MeasurementFailedError, PartialRunError, PreconditionError,
                     SafetyRefusalError)
from .executors import LiveExecutor, SimulatedExecutor
from .kvstore.engine import StoreOptions
from .methodology import EfficiencyReport, MbwuUnit, compare, measure_platform, measure_unit
from .simulator import (Bundle, DeviceSpec, PlatformSpec, Scenario, WorkloadDemand, curve_rows,
                        load_bundle)
from .workload import WorkloadSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MEASUREMENT = 3
EXIT_SAFETY = 4


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _bundle_from_args(args) -> Bundle:
    if args.bundle:
        return load_bundle(args.bundle)
    parts = (args.platform, args.device, args.demand)
    if not all(parts):
        raise ConfigError("give --bundle, or all of --platform --device --demand")
    scenario = Scenario.from_file(args.scenario) if args.scenario else Scenario()
    return Bundle(PlatformSpec.from_file(args.platform), DeviceSpec.from_file(args.device),
                  WorkloadDemand.from_file(args.demand), scenario)


def _executor(args, spec, for_unit=False):
    if args.endpoint:
        options = StoreOptions.from_file(args.store_options) if args.store_options else None
        return LiveExecutor(args.endpoint, spec, duration=args.duration, interval=args.interval,
                            queue_depth=args.queue_depth, media_id=args.media_id,
                            store_options=options)
    bundle = _bundle_from_args(args)
    kw = {"seed": args.seed, "interval": args.interval}
    if for_unit and not args.on_platform:
        return SimulatedExecutor.ideal_host(bundle, **kw)
    return SimulatedExecutor(bundle, **kw)


def cmd_precondition(args):
    report = camp.precondition(args.device, args.mode, confirm=args.yes, simulated=args.simulated,
                               seed=args.seed)
    _emit(report, args.out)


def cmd_measure_unit(args):
    spec = WorkloadSpec.from_file(args.workload)
    unit = measure_unit(_executor(args, spec, for_unit=True), spec, args.max_threads)
    _emit(unit.to_dict(), args.out)


def cmd_measure_platform(args):
    spec = WorkloadSpec.from_file(args.workload)
    unit = MbwuUnit.from_json(args.unit)
    result = measure_platform(_executor(args, spec), spec, unit, args.max_devices)
    _emit(result.to_dict(), args.out)


def cmd_simulate(args):
    bundle = _bundle_from_args(args)
    if args.n is not None:
        _emit(bundle.simulate(args.n).to_dict(), args.out)
        return
    rows = curve_rows(bundle.platform, bundle.device, bundle.demand, bundle.scenario,
                      args.n_max or bundle.connector_cap, bundle.beta)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, ["n_devices", "wops", "mbwus", "watts", "binding_resource"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()


def _efficiency_report(path) -> EfficiencyReport:
    p = Path(path)
    if p.is_dir():
        p = p / "efficiency.json"
    if not p.exists():
        raise ConfigError(f"no efficiency report at {p}")
    return EfficiencyReport.from_json(p)


def cmd_compare(args):
    savings = compare(_efficiency_report(args.baseline), _efficiency_report(args.candidate))
    _emit(savings.to_dict(), args.out)


def cmd_emit_plots(args):
    for path in camp.emit_plots(args.campaign_dir, args.out):
        print(path)


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        return key, json.loads(value)
    except ValueError:
        return key, value


def cmd_run_campaign(args):
    overrides = dict(_parse_override(s) for s in args.set)
    if args.output_dir:
        overrides["output_dir"] = str(Path(args.output_dir).resolve())
    if args.unit:
        overrides["unit_source"] = {"reuse": str(Path(args.unit).resolve())}
    if args.bundle:
        overrides["backend.bundle"] = args.bundle
    if args.seed is not None:
        overrides["backend.seed"] = args.seed
    if args.max_devices is not None:
        overrides["max_devices"] = args.max_devices
    if args.max_threads is not None:
        overrides["max_threads"] = args.max_threads
    config = camp.CampaignConfig.from_file(args.config, overrides)
    artifacts = camp.run_campaign(config)
    print(json.dumps(json.loads(Path(artifacts["efficiency.json"]).read_text()), indent=2, sort_keys=True))


def _add_backend(p):
    p.add_argument("--bundle", help="simulator bundle file or shipped calibration name")
    p.add_argument("--platform", help="platform JSON (with --device/--demand/--scenario)")
    p.add_argument("--device")
    p.add_argument("--demand")
    p.add_argument("--scenario")
    p.add_argument("--endpoint", action="append", help="live daemon HOST:PORT; repeat per device")
    p.add_argument("--store-options", help="store options JSON for live runs")
    p.add_argument("--duration", type=float, default=10.0, help="seconds per live run")
    p.add_argument("--interval", type=float, default=1.0, help="throughput sampling interval")
    p.add_argument("--queue-depth", type=int, default=32)
    p.add_argument("--media-id", default="live-device")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write the JSON result here")


def build_parser():
    parser = argparse.ArgumentParser(prog="mbwu", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precondition", help="purge and fill devices (destructive)")
    p.add_argument("--device", action="append", default=[], required=False)
    p.add_argument("--mode", choices=camp.PRECONDITION_MODES, default="purge_and_fill")
    p.add_argument("--yes", action="store_true", help="confirm destruction of device contents")
    p.add_argument("--simulated", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_precondition)

    p = sub.add_parser("measure-unit", help="thread sweep on one device, caching defeated")
    p.add_argument("--workload", required=True)
    p.add_argument("--max-threads", type=int)
    p.add_argument("--on-platform", action="store_true",
                   help="simulated: measure on the bundle platform instead of an ideal host")
    _add_backend(p)
    p.set_defaults(func=cmd_measure_unit)

    p = sub.add_parser("measure-platform", help="device sweep under normal caching")
    p.add_argument("--workload", required=True)
    p.add_argument("--unit", required=True)
    p.add_argument("--max-devices", type=int)
    _add_backend(p)
    p.set_defaults(func=cmd_measure_platform)

    p = sub.add_parser("simulate", help="evaluate the analytic platform model")
    p.add_argument("--bundle")
    p.add_argument("--platform")
    p.add_argument("--device")
    p.add_argument("--demand")
    p.add_argument("--scenario")
    p.add_argument("--n", type=int, help="single device count (JSON output)")
    p.add_argument("--n-max", type=int, help="curve length (CSV output)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="percent savings of candidate over baseline")
    p.add_argument("baseline", help="efficiency.json or campaign directory")
    p.add_argument("candidate", help="efficiency.json or campaign directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emit-plots", help="write plot CSVs from a campaign directory")
    p.add_argument("campaign_dir")
    p.add_argument("--out", help="output directory (default: the campaign directory)")
    p.set_defaults(func=cmd_emit_plots)

    p = sub.add_parser("run-campaign", help="full pipeline from a campaign config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--unit", help="reuse this unit.json instead of measuring")
    p.add_argument("--bundle")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-devices", type=int)
    p.add_argument("--max-threads", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override any config field, dotted keys for nesting")
    p.set_defaults(func=cmd_run_campaign)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SafetyRefusalError as exc:
        print(f"mbwu: refused: {exc}", file=sys.stderr)
        return EXIT_SAFETY
    except (ConfigError, InvalidSpecError, IncomparableResultsError, IncompleteCampaignError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"mbwu: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeasurementFailedError, PartialRunError, AbortedLoadError, PreconditionError) as exc:
        print(f"mbwu: measurement failed: {exc}", file=sys.stderr)
        return EXIT_MEASUREMENT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
