import pytest

from offloader import ChannelRates, KernelRecord, TensorKind, TensorRecord, make_trace


def mk_trace(durations, tensors, meta=None):
    """tensors: iterable of (id, size, kind, accesses[, layer]) tuples."""
    kernels = [KernelRecord(i, f"k{i}", d) for i, d in enumerate(durations)]
    records = []
    for spec in tensors:
        tid, size, kind, accesses = spec[:4]
        layer = spec[4] if len(spec) > 4 else None
        records.append(TensorRecord(tid, size, TensorKind(kind), tuple(accesses),
                                    layer))
    return make_trace(kernels, records, meta or {})


@pytest.fixture
def ex1():
    """Five 10ms kernels; A (100 MB) used at k0 and k4, B (100 MB) at k2."""
    return mk_trace(
        [10_000] * 5,
        [(0, 100_000_000, "intermediate", [0, 4]),
         (1, 100_000_000, "intermediate", [2])],
    )


@pytest.fixture
def rates20k():
    return ChannelRates.symmetric(20_000)
