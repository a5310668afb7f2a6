"""Media-based work unit (MBWU) measurement framework and platform simulator."""

from .methodology import (EfficiencyReport, MbwuUnit, PlatformResult, SavingsReport, SteadySegment,
                          compare, detect_steady_state, efficiency, measure_platform, measure_unit)
from .simulator import (Bundle, DeviceSpec, PlatformSpec, Scenario, SimResult, WorkloadDemand,
                        load_calibration, mbwu_curve, memory_pressure_factor, simulate)
from .workload import KeyGenerator, RunReport, WorkloadSpec, load_phase, op_stream, run_phase

__version__ = "0.1.0"

__all__ = [
    "Bundle", "DeviceSpec", "EfficiencyReport", "KeyGenerator", "MbwuUnit", "PlatformResult",
    "PlatformSpec", "RunReport", "SavingsReport", "Scenario", "SimResult", "SteadySegment",
    "WorkloadDemand", "WorkloadSpec", "compare", "detect_steady_state", "efficiency",
    "load_calibration", "load_phase", "mbwu_curve", "measure_platform", "measure_unit",
    "memory_pressure_factor", "op_stream", "run_phase", "simulate",
]
