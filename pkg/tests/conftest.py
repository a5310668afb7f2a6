import pytest

from mbwu.kvstore import KVClient, KVDaemon, StoreOptions
from mbwu.simulator import DeviceSpec, PlatformSpec, Scenario, WorkloadDemand
from mbwu.workload import WorkloadSpec


@pytest.fixture
def small_spec():
    return WorkloadSpec(value_size=256, record_count=500, seed=7)


@pytest.fixture
def daemon(tmp_path):
    (tmp_path / "store").mkdir()
    with KVDaemon("127.0.0.1:0", tmp_path / "store", options=StoreOptions(memory_budget=1 << 20)) as d:
        yield d


@pytest.fixture
def client(daemon):
    with KVClient(daemon.address) as c:
        c.open()
        yield c


@pytest.fixture
def toy_device():
    return DeviceSpec(media_wops=1000.0, media_id="toy")


def make_platform(**kw):
    base = dict(cpu_capacity=None, mem_capacity=None, connectors=8, frontend_net_bw=None,
                backend_net_bw=None, name="toy")
    base.update(kw)
    return PlatformSpec(**base)


def make_demand(**kw):
    base = dict(cpu_cycles_per_wo=0.0, mem_per_device=0.0, bytes_per_wo_frontend=1000.0,
                amplification=6.0, net_cpu_cycles_per_wo=0.0)
    base.update(kw)
    return WorkloadDemand(**base)


INTEGRATED = Scenario("integrated")
NETWORK = Scenario("network")
DISAGGREGATED = Scenario("disaggregated")
