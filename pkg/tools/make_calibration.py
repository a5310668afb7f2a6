"""Regenerate the shipped calibration bundles.

Every constant below is a fit chosen so the analytic model lands on the
target platform MBWU counts below; prices, power draws and volumes are
placeholders, not vendor data.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "mbwu" / "calibration"

MEDIA_WOPS = 2500.0
FRONTEND_BYTES = 4142.0      # mean wire bytes per 50/50 GET/PUT op, 16 B key, 4 KiB value
AMPLIFICATION = 6.0
GIB = 1 << 30

DEVICE = {
    "media_wops": MEDIA_WOPS,
    "queue_depth": 32,
    "cost": 100.0,
    "power_active": 3.0,
    "bytes_per_wo_device": 4112.0 * AMPLIFICATION,
    "media_id": "sata-ssd-480g",
}

HOST_CPU = 16 * 2.4e9
EMBEDDED_CPU = 2 * 1.8e9 + 4 * 1.4e9

# target plateaus, in MBWUs
HOST = {"integrated": 6.0, "network": 5.2, "disaggregated": 3.28}
EMBEDDED = {"integrated": 0.5, "network": 0.37}

# placeholder platform power at peak, fitted to target kW/MBWU savings
HOST_WATTS = {"integrated": 298.0, "network": 389.67, "disaggregated": 453.83}
EMBEDDED_WATTS = 15.0


def host(kind):
    base = HOST_CPU / (HOST["integrated"] * MEDIA_WOPS)
    net = HOST_CPU / (HOST["network"] * MEDIA_WOPS) - base
    watts = HOST_WATTS[kind]
    platform = {
        "name": f"host-{kind}",
        "cpu_capacity": HOST_CPU,
        "mem_capacity": 64 * GIB,
        "connectors": 8,
        "frontend_net_bw": 1.25e9,
        "backend_net_bw": HOST["disaggregated"] * MEDIA_WOPS * FRONTEND_BYTES * AMPLIFICATION,
        "cost": 6000.0,
        "volume": 0.0274,
        "power_idle": 150.0,
        "power_peak": watts,
        "amps": watts / 120.0,
        "volts": 120.0,
    }
    demand = {
        "cpu_cycles_per_wo": base,
        "mem_per_device": 8 * GIB,
        "bytes_per_wo_frontend": FRONTEND_BYTES,
        "amplification": AMPLIFICATION,
        "net_cpu_cycles_per_wo": net,
    }
    scenario = {"kind": kind, "connector_override": 4 if kind == "disaggregated" else None}
    return platform, demand, scenario


def embedded(kind):
    base = EMBEDDED_CPU / (EMBEDDED["integrated"] * MEDIA_WOPS)
    net = EMBEDDED_CPU / (EMBEDDED["network"] * MEDIA_WOPS) - base
    platform = {
        "name": f"embedded-{kind}",
        "cpu_capacity": EMBEDDED_CPU,
        "mem_capacity": 4 * GIB,
        "connectors": 1,
        "frontend_net_bw": 1.25e8,
        # amplified traffic stays on the board's internal bus
        "backend_net_bw": None,
        "cost": 180.0,
        "volume": 0.0012,
        "power_idle": 6.0,
        "power_peak": EMBEDDED_WATTS,
        "amps": EMBEDDED_WATTS / 12.0,
        "volts": 12.0,
    }
    demand = {
        "cpu_cycles_per_wo": base,
        "mem_per_device": 2 * GIB,
        "bytes_per_wo_frontend": FRONTEND_BYTES,
        "amplification": AMPLIFICATION,
        "net_cpu_cycles_per_wo": net,
    }
    return platform, demand, {"kind": kind, "connector_override": None}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for family, build in (("host", host), ("embedded", embedded)):
        for kind in ("integrated", "network", "disaggregated"):
            platform, demand, scenario = build(kind)
            bundle = {
                "name": f"{family}_{kind}",
                "note": "fitted calibration; costs, watts and volumes are placeholders",
                "beta": 1.0,
                "platform": platform,
                "device": DEVICE,
                "demand": demand,
                "scenario": scenario,
            }
            path = OUT / f"{family}_{kind}.json"
            path.write_text(json.dumps(bundle, indent=2) + "\n")
            print(path)


if __name__ == "__main__":
    main()
