import json

import pytest
from hypothesis import given, settings, strategies as st

from mbwu.errors import InvalidSpecError
from mbwu.simulator import (CALIBRATIONS, DeviceSpec, PlatformSpec, Scenario,
                            WorkloadDemand, bottleneck_of, curve_rows, load_bundle,
                            load_calibration, mbwu_curve, memory_pressure_factor, plateau,
                            resource_caps, simulate)

from conftest import DISAGGREGATED, INTEGRATED, NETWORK, make_demand, make_platform

GIB = 1 << 30


@pytest.mark.parametrize("mem_cap,per_dev,n,beta,expected", [
    (16 * GIB, 4 * GIB, 4, 1.0, 1.0),       # exactly fits
    (16 * GIB, 4 * GIB, 5, 1.0, 1.25),      # 4 GiB over 16
    (16 * GIB, 4 * GIB, 8, 1.0, 2.0),
    (16 * GIB, 4 * GIB, 8, 0.5, 1.5),
    (None, 4 * GIB, 100, 1.0, 1.0),         # unlimited memory
])
def test_memory_pressure_factor(mem_cap, per_dev, n, beta, expected):
    p = make_platform(mem_capacity=mem_cap)
    assert memory_pressure_factor(p, make_demand(mem_per_device=per_dev), n, beta) == expected


def test_device_bound_until_connectors(toy_device):
    p = make_platform(connectors=4)
    curve = mbwu_curve(p, toy_device, make_demand(), INTEGRATED, 8)
    assert [m for _, m in curve] == [1, 2, 3, 4, 4, 4, 4, 4]
    r = simulate(p, toy_device, make_demand(), INTEGRATED, 6)
    assert r.n_attached == 4 and r.binding_resource == "device"
    assert bottleneck_of(r) == "connectors"
    assert bottleneck_of(simulate(p, toy_device, make_demand(), INTEGRATED, 2)) == "device"


def test_cpu_plateau_at_two_devices(toy_device):
    # cpu affords 2000 WOPS: 2e9 cycles / 1e6 per op
    p = make_platform(cpu_capacity=2e9)
    d = make_demand(cpu_cycles_per_wo=1e6)
    curve = mbwu_curve(p, toy_device, d, INTEGRATED, 8)
    assert [m for _, m in curve] == [1, 2, 2, 2, 2, 2, 2, 2]
    assert simulate(p, toy_device, d, INTEGRATED, 3).binding_resource == "cpu"


def test_tie_resolves_to_device(toy_device):
    p = make_platform(cpu_capacity=2e9)
    r = simulate(p, toy_device, make_demand(cpu_cycles_per_wo=1e6), INTEGRATED, 2)
    assert r.terms["device"] == r.terms["cpu"] == 2000
    assert r.binding_resource == "device"


def test_backend_traffic_is_amplified(toy_device):
    p = make_platform()
    r = simulate(p, toy_device, make_demand(bytes_per_wo_frontend=4096, amplification=6), DISAGGREGATED, 3)
    assert r.backend_bytes_per_s == pytest.approx(6 * r.frontend_bytes_per_s)
    assert r.frontend_bytes_per_s == pytest.approx(3000 * 4096)
    n = simulate(p, toy_device, make_demand(), NETWORK, 3)
    assert n.backend_bytes_per_s == 0 and n.frontend_bytes_per_s > 0
    i = simulate(p, toy_device, make_demand(), INTEGRATED, 3)
    assert i.frontend_bytes_per_s == 0 and "frontend_net" not in i.terms


@pytest.mark.parametrize("backend_bw", [6e6, 1.5e7, 3.3e7])
def test_backend_crossover_closed_form(toy_device, backend_bw):
    f, a = 1000.0, 6.0
    p = make_platform(backend_net_bw=backend_bw, connectors=16)
    d = make_demand(bytes_per_wo_frontend=f, amplification=a)
    crossover = backend_bw / (f * a * toy_device.media_wops)
    for n in range(1, 17):
        r = simulate(p, toy_device, d, DISAGGREGATED, n)
        expected = min(n * toy_device.media_wops, backend_bw / (f * a))
        assert r.wops == pytest.approx(expected)
        assert r.binding_resource == ("device" if n <= crossover else "backend_net")


def test_memory_pressure_can_reduce_raw_throughput_but_not_curve(toy_device):
    p = make_platform(cpu_capacity=3e9, mem_capacity=2 * GIB)
    d = make_demand(cpu_cycles_per_wo=1e6, mem_per_device=1 * GIB)
    raw = [simulate(p, toy_device, d, INTEGRATED, n).wops for n in range(1, 9)]
    assert raw[3] < raw[2]
    curve = [m for _, m in mbwu_curve(p, toy_device, d, INTEGRATED, 8)]
    assert all(b >= a for a, b in zip(curve, curve[1:]))


def test_connector_override(toy_device):
    p = make_platform(connectors=8)
    r = simulate(p, toy_device, make_demand(), Scenario("disaggregated", connector_override=3), 8)
    assert r.n_attached == 3 and r.wops == 3000


def test_network_adds_cpu_cost(toy_device):
    p = make_platform(cpu_capacity=1e9)
    d = make_demand(cpu_cycles_per_wo=1e5, net_cpu_cycles_per_wo=1e5)
    assert resource_caps(p, toy_device, d, INTEGRATED, 1)["cpu"] == pytest.approx(1e4)
    assert resource_caps(p, toy_device, d, NETWORK, 1)["cpu"] == pytest.approx(5e3)


def test_power_model(toy_device):
    p = make_platform(power_idle=100, power_peak=200, amps=2, volts=100)
    dev = DeviceSpec(media_wops=1000, power_active=5)
    r = simulate(p, dev, make_demand(), INTEGRATED, 2)
    assert r.power == pytest.approx(100 + 100 * 1.0 + 10)


def test_utilizations_within_unit_interval(toy_device):
    p = make_platform(cpu_capacity=5e9, frontend_net_bw=1e7, backend_net_bw=3e7, mem_capacity=8 * GIB)
    d = make_demand(cpu_cycles_per_wo=1e6, mem_per_device=GIB, net_cpu_cycles_per_wo=1e5)
    for sc in (INTEGRATED, NETWORK, DISAGGREGATED):
        for n in range(1, 9):
            r = simulate(p, toy_device, d, sc, n)
            assert all(0 <= u <= 1 + 1e-12 for u in r.utilization.values())
            assert r.utilization[r.binding_resource] == pytest.approx(1.0)


@pytest.mark.parametrize("kwargs", [
    {"connectors": 0}, {"cpu_capacity": 0}, {"power_idle": 10, "power_peak": 5},
    {"power_peak": 100, "amps": 1, "volts": 50},
])
def test_invalid_platform(kwargs):
    with pytest.raises(InvalidSpecError):
        make_platform(**kwargs)


def test_invalid_device_and_demand():
    with pytest.raises(InvalidSpecError):
        DeviceSpec(media_wops=0)
    with pytest.raises(InvalidSpecError):
        make_demand(amplification=0.5)
    with pytest.raises(InvalidSpecError):
        make_demand(cpu_cycles_per_wo=-1)
    with pytest.raises(ValueError):
        Scenario("teleported")


def test_unlimited_platform_is_device_bound(toy_device):
    r = simulate(PlatformSpec.unlimited(), toy_device, make_demand(), DISAGGREGATED, 3)
    assert r.binding_resource == "device" and r.wops == 3000


def test_zero_devices_rejected(toy_device):
    with pytest.raises(InvalidSpecError):
        simulate(make_platform(), toy_device, make_demand(), INTEGRATED, 0)


def test_curve_rows(toy_device):
    rows = curve_rows(make_platform(connectors=2), toy_device, make_demand(), INTEGRATED, 3)
    assert [r["n_devices"] for r in rows] == [1, 2, 3]
    assert [r["mbwus"] for r in rows] == [1, 2, 2]
    assert rows[-1]["binding_resource"] == "device"


@pytest.mark.parametrize("name", CALIBRATIONS)
def test_calibrations_load_and_round_trip(name, tmp_path):
    b = load_calibration(name)
    path = tmp_path / "b.json"
    path.write_text(json.dumps(b.to_dict()))
    again = load_bundle(path)
    assert again.curve() == b.curve()
    assert load_bundle(name).name == b.name


def test_calibrated_plateaus():
    expected = {"host_integrated": 6.0, "host_network": 5.2, "host_disaggregated": 3.28,
                "embedded_integrated": 0.5, "embedded_network": 0.37, "embedded_disaggregated": 0.37}
    for name, m in expected.items():
        assert plateau(load_calibration(name).curve()) == pytest.approx(m, abs=1e-9)


specs = st.builds(
    dict,
    cpu=st.one_of(st.none(), st.floats(1e8, 1e11)),
    mem=st.one_of(st.none(), st.floats(1e9, 1e11)),
    connectors=st.integers(1, 16),
    fe=st.one_of(st.none(), st.floats(1e6, 1e10)),
    be=st.one_of(st.none(), st.floats(1e6, 1e10)),
    cycles=st.floats(0, 1e7),
    net_cycles=st.floats(0, 1e6),
    mem_per=st.floats(0, 1e10),
    fbytes=st.floats(1, 1e5),
    amp=st.floats(1, 10),
    wops=st.floats(10, 1e5),
)


def _objects(s):
    p = PlatformSpec(cpu_capacity=s["cpu"], mem_capacity=s["mem"], connectors=s["connectors"],
                     frontend_net_bw=s["fe"], backend_net_bw=s["be"])
    d = WorkloadDemand(cpu_cycles_per_wo=s["cycles"], mem_per_device=s["mem_per"],
                       bytes_per_wo_frontend=s["fbytes"], amplification=s["amp"],
                       net_cpu_cycles_per_wo=s["net_cycles"])
    return p, DeviceSpec(media_wops=s["wops"]), d


@settings(max_examples=100, deadline=None)
@given(specs)
def test_curve_monotone_and_bounded_by_connectors(s):
    p, dev, d = _objects(s)
    for sc in (INTEGRATED, NETWORK, DISAGGREGATED):
        curve = [m for _, m in mbwu_curve(p, dev, d, sc, p.connectors + 3)]
        assert all(b >= a - 1e-12 for a, b in zip(curve, curve[1:]))
        assert curve[-1] <= p.connectors + 1e-9
        assert curve[p.connectors - 1] == curve[-1]


@settings(max_examples=100, deadline=None)
@given(specs)
def test_integrated_dominates(s):
    p, dev, d = _objects(s)
    n = p.connectors
    i = plateau(mbwu_curve(p, dev, d, INTEGRATED, n))
    nw = plateau(mbwu_curve(p, dev, d, NETWORK, n))
    dg = plateau(mbwu_curve(p, dev, d, DISAGGREGATED, n))
    assert i >= nw * (1 - 1e-12) and nw >= dg * (1 - 1e-12)
