import json

import pytest
from hypothesis import given, settings, strategies as st

from offloader import (
    KernelRecord,
    TensorKind,
    TensorRecord,
    Trace,
    TraceParseError,
    TraceValidationError,
    gen_random_trace,
    parse_trace,
    validate_trace,
    write_trace,
)

EX1_STREAM = "\n".join([
    '{"version": 1, "meta": {"model": "ex1"}}',
    '{"kernel": {"index": 0, "name": "k0", "duration_us": 10000, "stage": null, "layer": null}}',
    '{"kernel": {"index": 1, "name": "k1", "duration_us": 10000, "stage": null, "layer": null}}',
    '{"kernel": {"index": 2, "name": "k2", "duration_us": 10000, "stage": null, "layer": null}}',
    '{"kernel": {"index": 3, "name": "k3", "duration_us": 10000, "stage": null, "layer": null}}',
    '{"kernel": {"index": 4, "name": "k4", "duration_us": 10000, "stage": null, "layer": null}}',
    '{"tensor": {"id": 0, "size_bytes": 100000000, "kind": "intermediate", "accesses": [0, 4], "layer": null}}',
    '{"tensor": {"id": 1, "size_bytes": 100000000, "kind": "intermediate", "accesses": [2], "layer": null}}',
]) + "\n"


def test_parse_empty_trace():
    trace = parse_trace('{"version": 1, "meta": {}}\n')
    assert trace.num_kernels == 0
    assert trace.tensors == []


def test_parse_ex1_start_times():
    trace = parse_trace(EX1_STREAM)
    assert trace.kernel_start_times() == [0, 10_000, 20_000, 30_000, 40_000]
    assert trace.iteration_length() == 50_000
    assert trace.meta == {"model": "ex1"}


def test_access_out_of_range_names_tensor():
    bad = EX1_STREAM.replace('"accesses": [2]', '"accesses": [7]')
    with pytest.raises(TraceValidationError, match="tensor 1"):
        parse_trace(bad)


def test_malformed_line_reports_line_number():
    bad = EX1_STREAM.replace('{"kernel": {"index": 2,', '{"kernel": {index: 2,')
    with pytest.raises(TraceParseError, match="line 4"):
        parse_trace(bad)


def test_unknown_keys_rejected():
    bad = EX1_STREAM.replace('"layer": null}}', '"layer": null, "color": 3}}', 1)
    with pytest.raises(TraceParseError, match="unknown kernel keys"):
        parse_trace(bad)


def test_kernel_after_tensor_rejected():
    lines = EX1_STREAM.strip().splitlines()
    shuffled = "\n".join([lines[0]] + lines[6:] + lines[1:6])
    with pytest.raises(TraceParseError, match="kernel record after tensor"):
        parse_trace(shuffled)


def test_validate_duplicate_tensor_id(ex1):
    ex1.tensors.append(ex1.tensors[0])
    report = validate_trace(ex1)
    assert any("duplicate" in v for v in report.violations)


def test_validate_non_monotonic_accesses():
    trace = Trace(
        kernels=[KernelRecord(i, f"k{i}", 10) for i in range(4)],
        tensors=[TensorRecord(0, 5, TensorKind.INTERMEDIATE, (3, 1))],
    )
    report = validate_trace(trace)
    assert len(report.violations) == 1
    assert "not strictly increasing" in report.violations[0]


def test_validate_ex1_clean(ex1):
    assert validate_trace(ex1).ok


def test_roundtrip_ex1():
    trace = parse_trace(EX1_STREAM)
    assert parse_trace(write_trace(trace)) == trace


def test_roundtrip_empty():
    trace = parse_trace('{"version": 1, "meta": {}}\n')
    data = write_trace(trace)
    assert data.decode("utf-8").count("\n") == 1
    assert parse_trace(data) == trace


def test_meta_equality_is_order_independent():
    a = parse_trace('{"version": 1, "meta": {"x": 1, "y": 2}}\n')
    b = parse_trace('{"version": 1, "meta": {"y": 2, "x": 1}}\n')
    assert a == b


def test_header_version_checked():
    with pytest.raises(TraceParseError, match="version"):
        parse_trace('{"version": 9, "meta": {}}\n')


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(0, 10), m=st.integers(0, 8))
def test_random_traces_roundtrip_and_validate(seed, n, m):
    trace = gen_random_trace(seed, n, m, size_range=(1, 10**9),
                             duration_range=(1, 10**5))
    assert validate_trace(trace).ok
    assert parse_trace(write_trace(trace)) == trace


@settings(max_examples=40, deadline=None)
@given(durations=st.lists(st.integers(1, 10**6), max_size=12))
def test_start_times_are_prefix_sums(durations):
    trace = Trace([KernelRecord(i, "k", d) for i, d in enumerate(durations)], [])
    starts = trace.kernel_start_times()
    assert starts == [sum(durations[:i]) for i in range(len(durations))]


def _mutations(trace_text):
    yield trace_text.replace('"duration_us": 10000', '"duration_us": 0', 1)
    yield trace_text.replace('"index": 3', '"index": 9')
    yield trace_text.replace('"size_bytes": 100000000', '"size_bytes": 0', 1)
    yield trace_text.replace('"accesses": [0, 4]', '"accesses": []')
    yield trace_text.replace('"id": 1,', '"id": 0,')


@pytest.mark.parametrize("mutant", list(_mutations(EX1_STREAM)))
def test_mutated_traces_fail_validation(mutant):
    with pytest.raises(TraceValidationError):
        parse_trace(mutant)
