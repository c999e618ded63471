"""Derived tensor-activity views of a trace.

Three views feed the planner and the reporting pipeline:

* inactive periods: for each tensor, the kernel ranges between consecutive
  uses during which it could live off the GPU. Global tensors additionally
  get one wrap-around period between their last use and their first use of
  the (identical) next iteration.
* the memory timeline: per-kernel bytes that must be GPU resident if nothing
  is offloaded. Intermediates are resident from first through last access,
  globals at every kernel.
* the characterization report: per-kernel active bytes/fractions and a
  histogram of inactive-period durations by tensor size class.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .trace import TensorKind, Trace

# Size classes follow the usual 10 MB .. 1 GB banding of training tensors;
# durations band around the microsecond scales where migration pays off.
DEFAULT_SIZE_BUCKETS = (10_000_000, 100_000_000, 1_000_000_000)
DEFAULT_DURATION_BUCKETS = (1_000, 10_000, 100_000)


@dataclass(frozen=True)
class InactivePeriod:
    """A maximal run of kernels during which one tensor is unused.

    `start_kernel`..`end_kernel` are inclusive kernel indices. When `wraps`
    is true the period crosses the iteration boundary: it covers the kernels
    after the tensor's last access plus (when `end_kernel` < `start_kernel`)
    the kernels before its first access of the next iteration.
    """

    tensor_id: int
    size_bytes: int
    start_kernel: int
    end_kernel: int
    wraps: bool = False


@dataclass
class MemoryTimeline:
    per_kernel_bytes: list[int]

    def peak(self) -> int:
        return max(self.per_kernel_bytes, default=0)

    def copy(self) -> "MemoryTimeline":
        return MemoryTimeline(list(self.per_kernel_bytes))


def compute_inactive_periods(trace: Trace) -> list[InactivePeriod]:
    """All inactive periods, in (tensor order, period start) order.

    Intermediates contribute one period per gap between consecutive accesses;
    nothing before the first or after the last access (not yet allocated /
    already freed). Globals additionally contribute the wrap-around period
    when last and first access are not adjacent across the boundary.
    """
    n = trace.num_kernels
    periods: list[InactivePeriod] = []
    for t in trace.tensors:
        for a, b in zip(t.accesses, t.accesses[1:]):
            if b - a > 1:
                periods.append(InactivePeriod(t.id, t.size_bytes, a + 1, b - 1))
        if t.kind is TensorKind.GLOBAL:
            # interior kernels across the boundary: after last access this
            # iteration plus before first access next iteration
            gap = (n - 1 - t.last_access) + t.first_access
            if gap > 0:
                periods.append(InactivePeriod(
                    t.id, t.size_bytes,
                    start_kernel=(t.last_access + 1) % n,
                    end_kernel=(t.first_access - 1) % n,
                    wraps=True,
                ))
    return periods


def period_interior_duration(period: InactivePeriod, trace: Trace) -> int:
    """Sum of kernel durations strictly inside the period (migratable time)."""
    durations = [k.duration_us for k in trace.kernels]
    if not period.wraps:
        return sum(durations[period.start_kernel:period.end_kernel + 1])
    tensor = trace.tensor_by_id()[period.tensor_id]
    tail = sum(durations[tensor.last_access + 1:])
    head = sum(durations[:tensor.first_access])
    return tail + head


def compute_memory_timeline(trace: Trace) -> MemoryTimeline:
    """Per-kernel resident bytes with no offloading at all."""
    n = trace.num_kernels
    per_kernel = [0] * n
    for t in trace.tensors:
        if t.kind is TensorKind.GLOBAL:
            lo, hi = 0, n - 1
        else:
            lo, hi = t.first_access, t.last_access
        for k in range(lo, hi + 1):
            per_kernel[k] += t.size_bytes
    return MemoryTimeline(per_kernel)


def per_kernel_active_bytes(trace: Trace) -> list[int]:
    """Bytes touched by each kernel; the floor no offloading plan can beat."""
    active = [0] * trace.num_kernels
    for t in trace.tensors:
        for a in t.accesses:
            active[a] += t.size_bytes
    return active


# --- characterization ------------------------------------------------------

def bucket_label(bounds: tuple[int, ...], value: int) -> str:
    if value < bounds[0]:
        return f"<{bounds[0]}"
    for lo, hi in zip(bounds, bounds[1:]):
        if lo <= value < hi:
            return f"[{lo},{hi})"
    return f">={bounds[-1]}"


@dataclass
class CharacterizationReport:
    capacity_bytes: int
    active_bytes: list[int]
    active_fraction: list[float]
    histogram: dict[tuple[str, str], int]  # (size class, duration class) -> count
    mean_active_fraction: float
    max_active_fraction: float
    size_buckets: tuple[int, ...] = DEFAULT_SIZE_BUCKETS
    duration_buckets: tuple[int, ...] = DEFAULT_DURATION_BUCKETS
    total_periods: int = 0


def characterize(trace: Trace, capacity: int,
                 size_buckets: tuple[int, ...] = DEFAULT_SIZE_BUCKETS,
                 duration_buckets: tuple[int, ...] = DEFAULT_DURATION_BUCKETS,
                 ) -> CharacterizationReport:
    if capacity <= 0:
        raise ValueError("capacity must be > 0")
    active = per_kernel_active_bytes(trace)
    fractions = [b / capacity for b in active]
    histogram: dict[tuple[str, str], int] = {}
    periods = compute_inactive_periods(trace)
    for p in periods:
        cell = (
            bucket_label(size_buckets, p.size_bytes),
            bucket_label(duration_buckets, period_interior_duration(p, trace)),
        )
        histogram[cell] = histogram.get(cell, 0) + 1
    return CharacterizationReport(
        capacity_bytes=capacity,
        active_bytes=active,
        active_fraction=fractions,
        histogram=histogram,
        mean_active_fraction=sum(fractions) / len(fractions) if fractions else 0.0,
        max_active_fraction=max(fractions, default=0.0),
        size_buckets=size_buckets,
        duration_buckets=duration_buckets,
        total_periods=len(periods),
    )


def fractions_csv(report: CharacterizationReport) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["kernel", "active_bytes", "active_fraction"])
    for k, (b, f) in enumerate(zip(report.active_bytes, report.active_fraction)):
        w.writerow([k, b, f"{f:.6f}"])
    return out.getvalue()


def histogram_csv(report: CharacterizationReport) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["size_class_bytes", "duration_class_us", "count"])
    for (size_cls, dur_cls), count in sorted(report.histogram.items()):
        w.writerow([size_cls, dur_cls, count])
    return out.getvalue()
