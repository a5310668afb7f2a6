import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mbwu.errors import AbortedLoadError, InvalidSpecError, PartialRunError
from mbwu.workload import (KeyGenerator, OpKind, RateLimiter, RunReport, SimulatedEndpoint,
                           WorkloadSpec, encode_key, load_phase, next_key, op_stream, record_value,
                           run_phase, run_replicated)


class FakeClock:
    def __init__(self):
        self.now = 0.0
        self.slept = []

    def __call__(self):
        return self.now

    def sleep(self, dt):
        self.slept.append(dt)
        self.now += dt


def zipf_pmf(n, theta):
    """Reference pmf by direct harmonic summation."""
    h = math.fsum(r ** -theta for r in range(1, n + 1))
    return [r ** -theta / h for r in range(1, n + 1)]


# -- spec ------------------------------------------------------------------

def test_record_count_derived_from_40_gib_dataset():
    spec = WorkloadSpec(dataset_size=40 << 30)
    assert spec.record_size == 4112
    assert spec.record_count == 42949672960 // 4112 == 10444959


def test_dataset_size_derived_from_record_count():
    assert WorkloadSpec(record_count=10).dataset_size == 41120


@pytest.mark.parametrize("kwargs", [
    {"record_count": 10, "read_fraction": 1.5},
    {"record_count": 10, "read_fraction": 0.8, "delete_fraction": 0.3},
    {"record_count": 10, "key_distribution": "gaussian"},
    {"record_count": 10, "zipf_theta": 0.0},
    {"record_count": 10, "key_size": 0},
    {"record_count": 10, "load_rate_limit": 0},
    {"record_count": 1000, "key_size": 2},
    {},
    {"record_count": 10, "dataset_size": 10 ** 9},
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(InvalidSpecError):
        WorkloadSpec(**kwargs)


def test_unknown_field_rejected():
    with pytest.raises(InvalidSpecError):
        WorkloadSpec.from_dict({"record_count": 1, "colour": "red"})


def test_spec_file_round_trip_and_digest(tmp_path):
    spec = WorkloadSpec(dataset_size=1 << 20, seed=3)
    spec.to_file(tmp_path / "w.json")
    again = WorkloadSpec.from_file(tmp_path / "w.json")
    assert again == spec
    assert again.digest() == spec.digest()
    assert spec.replace(seed=4).digest() != spec.digest()


def test_replace_rederives_record_count():
    spec = WorkloadSpec(dataset_size=41120)
    assert spec.replace(dataset_size=82240).record_count == 20


# -- keys ------------------------------------------------------------------

def test_encode_key_is_zero_padded_decimal():
    assert encode_key(42, 8) == b"00000042"
    with pytest.raises(InvalidSpecError):
        encode_key(10 ** 8, 8)


@pytest.mark.parametrize("n,theta", [(10, 0.99), (1000, 0.99), (200, 0.5), (50, 1.5)])
def test_zipf_frequencies_match_harmonic_oracle(n, theta):
    gen = KeyGenerator(n, "zipf", theta, seed=11)
    draws = 200_000
    ranks = gen.sample_ranks(draws)
    assert ranks.min() >= 1 and ranks.max() <= n
    freq = np.bincount(ranks, minlength=n + 1)[1:] / draws
    pmf = np.array(zipf_pmf(n, theta))
    top = min(5, n)
    # binomial standard error bound, 5 sigma
    sigma = np.sqrt(pmf[:top] * (1 - pmf[:top]) / draws)
    assert np.all(np.abs(freq[:top] - pmf[:top]) < 5 * sigma)
    assert abs(freq.sum() - 1.0) < 1e-12


def test_uniform_distribution_is_flat():
    gen = KeyGenerator(20, "uniform", seed=1)
    counts = np.bincount(gen.sample_ranks(100_000), minlength=21)[1:]
    assert counts.min() > 4500 and counts.max() < 5500


def test_rank_permutation_is_a_bijection():
    for n in (1, 2, 97, 1000, 1024):
        gen = KeyGenerator(n, seed=5)
        assert sorted(gen.rank_to_index(np.arange(1, n + 1)).tolist()) == list(range(n))


def test_permutation_hides_insert_order():
    gen = KeyGenerator(10_000, seed=5)
    assert gen.rank_to_index(1) != 0 or gen.rank_to_index(2) != 1


def test_key_stream_deterministic_per_seed():
    a = KeyGenerator(1000, seed=9)
    b = KeyGenerator(1000, seed=9)
    c = KeyGenerator(1000, seed=10)
    ka = [next_key(a) for _ in range(50)]
    assert ka == [next_key(b) for _ in range(50)]
    assert ka != [next_key(c) for _ in range(50)]
    assert all(len(k) == 16 for k in ka)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 5000), seed=st.integers(0, 2 ** 32 - 1))
def test_indices_always_in_range(n, seed):
    idx = KeyGenerator(n, seed=seed).sample_indices(256)
    assert idx.min() >= 0 and idx.max() < n


# -- operation stream ------------------------------------------------------

def test_op_stream_length_and_determinism(small_spec):
    spec = small_spec.replace(op_count=300)
    ops = list(op_stream(spec))
    assert len(ops) == 300
    assert ops == list(op_stream(spec))
    assert ops != list(op_stream(spec, seed=99))


def test_read_fraction_is_binomially_plausible():
    spec = WorkloadSpec(record_count=100, value_size=8, read_fraction=0.3, op_count=20_000)
    reads = sum(op.kind is OpKind.GET for op in op_stream(spec))
    sigma = math.sqrt(20_000 * 0.3 * 0.7)
    assert abs(reads - 6000) < 5 * sigma


def test_puts_carry_values_of_configured_size(small_spec):
    ops = list(op_stream(small_spec.replace(op_count=200)))
    puts = [op for op in ops if op.kind is OpKind.PUT]
    assert puts and all(len(op.value) == 256 for op in puts)
    assert all(op.value is None for op in ops if op.kind is OpKind.GET)


def test_delete_fraction():
    spec = WorkloadSpec(record_count=100, value_size=8, read_fraction=0.5, delete_fraction=0.2,
                        op_count=10_000)
    kinds = [op.kind for op in op_stream(spec)]
    assert abs(kinds.count(OpKind.DELETE) / len(kinds) - 0.2) < 0.03


def test_empty_record_space_rejected():
    with pytest.raises(InvalidSpecError):
        next(op_stream(WorkloadSpec(record_count=0, op_count=1)))


# -- rate limiter ----------------------------------------------------------

def test_rate_limiter_paces_with_fake_clock():
    clock = FakeClock()
    limiter = RateLimiter(100, clock=clock, sleep=clock.sleep)
    stamps = [limiter.acquire() for _ in range(250)]
    assert stamps[0] == pytest.approx(0.01)
    assert stamps[-1] == pytest.approx(2.5)
    # no one-second window admits more than rate + 1
    arr = np.array(stamps)
    for t in arr:
        assert np.sum((arr >= t) & (arr < t + 1.0)) <= 101


def test_rate_limiter_does_not_bank_idle_time():
    clock = FakeClock()
    limiter = RateLimiter(10, clock=clock, sleep=clock.sleep)
    clock.now = 5.0
    a, b = limiter.acquire(), limiter.acquire()
    assert a == 5.0 and b == pytest.approx(5.1)


def test_rate_limiter_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        RateLimiter(0)


# -- load and run ----------------------------------------------------------

def test_load_phase_inserts_every_record(small_spec):
    store = {}

    class Sink:
        def put(self, k, v):
            store[k] = v

    report = load_phase(Sink(), small_spec)
    assert report.total_ops == len(store) == 500
    assert store[encode_key(3, 16)] == record_value(small_spec, 3)
    assert sum(c for _, c in report.throughput_series) == 500


def test_load_phase_rate_limited_with_fake_clock(small_spec):
    clock = FakeClock()
    spec = small_spec.replace(record_count=50, load_rate_limit=10.0)
    sink = type("Sink", (), {"put": lambda self, k, v: None})()
    report = load_phase(sink, spec, clock=clock, sleep=clock.sleep)
    assert report.elapsed == pytest.approx(5.0)
    counts = [c for _, c in report.throughput_series]
    assert sum(counts) == 50
    assert all(9 <= c <= 11 for c in counts[:-1])


def test_load_phase_abort_reports_progress(small_spec):
    class Flaky:
        n = 0

        def put(self, k, v):
            if self.n == 7:
                raise OSError("device gone")
            self.n += 1

    with pytest.raises(AbortedLoadError) as err:
        load_phase(Flaky(), small_spec)
    assert err.value.inserted == 7


def test_run_phase_report_shape(small_spec):
    ep = SimulatedEndpoint(2000)
    report = run_phase(ep, small_spec, threads=3, duration=0.6, interval=0.2)
    assert len(report.per_thread_ops) == 3
    assert len(report.throughput_series) == 3
    assert report.total_ops == sum(report.per_thread_ops)
    assert report.wops == pytest.approx(2000, rel=0.2)
    assert set(report.latency_percentiles) == {"p50", "p95", "p99"}
    assert report.latency_percentiles["p50"] <= report.latency_percentiles["p99"]


def test_run_phase_zero_duration(small_spec):
    report = run_phase(SimulatedEndpoint(100), small_spec, threads=2, duration=0)
    assert report.total_ops == 0 and report.per_thread_ops == [0, 0]


def test_run_phase_rejects_zero_threads(small_spec):
    with pytest.raises(ValueError):
        run_phase(SimulatedEndpoint(100), small_spec, threads=0, duration=1)


def test_run_phase_worker_failure_raises_partial(small_spec):
    class Broken:
        def get(self, k):
            raise OSError("boom")
        put = delete = get

    with pytest.raises(PartialRunError) as err:
        run_phase(Broken(), small_spec, threads=2, duration=0.2)
    assert all(s.startswith("failed") for s in err.value.worker_status)


def test_doubling_duration_doubles_ops(small_spec):
    a = run_phase(SimulatedEndpoint(1000), small_spec, threads=2, duration=0.5, interval=0.25)
    b = run_phase(SimulatedEndpoint(1000), small_spec, threads=2, duration=1.0, interval=0.25)
    assert b.total_ops / a.total_ops == pytest.approx(2.0, rel=0.1)


def test_replicated_run_scales_with_endpoints(small_spec):
    report = run_replicated([SimulatedEndpoint(500), SimulatedEndpoint(500)], small_spec,
                            threads=2, duration=0.6, interval=0.2)
    assert len(report.per_thread_ops) == 4
    assert report.wops == pytest.approx(1000, rel=0.2)


def test_run_report_round_trip(tmp_path):
    r = RunReport(10, 2.0, 5.0, {"p50": 1.0}, [10], [(1.0, 4), (2.0, 6)], 1.0)
    r.to_json(tmp_path / "r.json")
    r.series_to_csv(tmp_path / "r.csv")
    import json
    assert RunReport.from_dict(json.loads((tmp_path / "r.json").read_text())) == r
    assert (tmp_path / "r.csv").read_text().splitlines() == ["timestamp_s,ops", "1,4", "2,6"]
    assert r.series_values == [4.0, 6.0]
