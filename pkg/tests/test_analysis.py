import pytest
from hypothesis import given, settings, strategies as st

from offloader import (
    InactivePeriod,
    TensorKind,
    characterize,
    compute_inactive_periods,
    compute_memory_timeline,
    gen_random_trace,
    per_kernel_active_bytes,
)
from offloader.analysis import fractions_csv, histogram_csv, period_interior_duration

from conftest import mk_trace


def test_ex1_periods(ex1):
    assert compute_inactive_periods(ex1) == [
        InactivePeriod(tensor_id=0, size_bytes=100_000_000,
                       start_kernel=1, end_kernel=3, wraps=False)
    ]


def test_tensor_active_everywhere_has_no_periods():
    trace = mk_trace([10, 10, 10], [(0, 5, "intermediate", [0, 1, 2])])
    assert compute_inactive_periods(trace) == []


def test_global_single_access_wraps():
    trace = mk_trace([10] * 5, [(0, 7, "global", [0])])
    assert compute_inactive_periods(trace) == [
        InactivePeriod(0, 7, start_kernel=1, end_kernel=4, wraps=True)
    ]


def test_global_wrap_spans_boundary():
    trace = mk_trace([10] * 5, [(0, 7, "global", [1, 2])])
    periods = compute_inactive_periods(trace)
    assert periods == [InactivePeriod(0, 7, start_kernel=3, end_kernel=0, wraps=True)]
    assert period_interior_duration(periods[0], trace) == 30  # k3, k4, k0


def test_adjacent_accesses_product_no_period():
    trace = mk_trace([10, 10], [(0, 5, "intermediate", [0, 1])])
    assert compute_inactive_periods(trace) == []


def test_global_active_everywhere_no_wrap():
    trace = mk_trace([10, 10], [(0, 5, "global", [0, 1])])
    assert compute_inactive_periods(trace) == []


def test_ex1_memory_timeline(ex1):
    timeline = compute_memory_timeline(ex1)
    assert timeline.per_kernel_bytes == [100_000_000, 100_000_000, 200_000_000,
                                         100_000_000, 100_000_000]
    assert timeline.peak() == 200_000_000


def test_global_timeline_resident_everywhere():
    trace = mk_trace([1, 1, 1], [(0, 7, "global", [1])])
    assert compute_memory_timeline(trace).per_kernel_bytes == [7, 7, 7]


def test_empty_trace_timeline():
    trace = mk_trace([], [])
    assert compute_memory_timeline(trace).per_kernel_bytes == []
    assert compute_memory_timeline(trace).peak() == 0


def test_ex1_characterization(ex1):
    report = characterize(ex1, capacity=150_000_000,
                          size_buckets=(10_000_000, 1_000_000_000),
                          duration_buckets=(1_000, 100_000))
    third = 100_000_000 / 150_000_000
    assert report.active_fraction == [third, 0.0, third, 0.0, third]
    # A's single period: 100 MB tensor inactive for 3 x 10,000 us
    assert report.histogram == {("[10000000,1000000000)", "[1000,100000)"): 1}
    assert report.total_periods == 1
    assert report.max_active_fraction == pytest.approx(third)


def test_empty_trace_characterization():
    report = characterize(mk_trace([], []), capacity=100)
    assert report.active_bytes == []
    assert report.histogram == {}
    assert report.mean_active_fraction == 0.0


def test_characterize_rejects_bad_capacity(ex1):
    with pytest.raises(ValueError):
        characterize(ex1, capacity=0)


def test_csv_shapes(ex1):
    report = characterize(ex1, capacity=150_000_000)
    assert fractions_csv(report).splitlines()[0] == "kernel,active_bytes,active_fraction"
    assert len(fractions_csv(report).splitlines()) == 6
    assert histogram_csv(report).splitlines()[0] == "size_class_bytes,duration_class_us,count"


# --- properties --------------------------------------------------------------

def _brute_force_timeline(trace):
    n = trace.num_kernels
    out = []
    for k in range(n):
        total = 0
        for t in trace.tensors:
            if t.kind is TensorKind.GLOBAL:
                resident = True
            else:
                resident = t.accesses[0] <= k <= t.accesses[-1]
            if resident:
                total += t.size_bytes
        out.append(total)
    return out


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 6), m=st.integers(0, 6))
def test_timeline_matches_brute_force_scan(seed, n, m):
    trace = gen_random_trace(seed, n, m, size_range=(1, 100), duration_range=(1, 9))
    assert compute_memory_timeline(trace).per_kernel_bytes == _brute_force_timeline(trace)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), m=st.integers(1, 8))
def test_periods_and_accesses_partition_residency(seed, n, m):
    trace = gen_random_trace(seed, n, m, size_range=(1, 100), duration_range=(1, 9))
    periods = compute_inactive_periods(trace)
    for t in trace.tensors:
        mine = [p for p in periods if p.tensor_id == t.id]
        covered = set(t.accesses)
        for p in mine:
            if not p.wraps:
                kernels = range(p.start_kernel, p.end_kernel + 1)
            else:
                kernels = list(range(t.last_access + 1, n)) + list(range(0, t.first_access))
            for k in kernels:
                assert k not in covered, "periods overlap accesses"
                covered.add(k)
        if t.kind is TensorKind.GLOBAL:
            assert covered == set(range(n))
        else:
            assert covered == set(range(t.first_access, t.last_access + 1))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), m=st.integers(0, 8))
def test_active_bytes_bounded_by_timeline(seed, n, m):
    trace = gen_random_trace(seed, n, m, size_range=(1, 100), duration_range=(1, 9))
    active = per_kernel_active_bytes(trace)
    timeline = compute_memory_timeline(trace).per_kernel_bytes
    assert all(a <= t for a, t in zip(active, timeline))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8), m=st.integers(1, 6))
def test_full_offload_reconstructs_active_pattern(seed, n, m):
    """Residency minus all interior kernels equals the access pattern for
    intermediates."""
    trace = gen_random_trace(seed, n, m, size_range=(1, 100), duration_range=(1, 9),
                             global_fraction=0.0)
    periods = compute_inactive_periods(trace)
    reduced = compute_memory_timeline(trace).per_kernel_bytes[:]
    for p in periods:
        for k in range(p.start_kernel, p.end_kernel + 1):
            reduced[k] -= p.size_bytes
    assert reduced == per_kernel_active_bytes(trace)
