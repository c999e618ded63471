"""Normalized training throughput as a function of migration bandwidth.

The roofline policy is intentionally simple: when the trace oversubscribes
capacity, every inactive period is migrated. Offloads leave on a serial
channel in period-start order; each prefetch rides the serial return channel
as soon as its offload has landed, in order of when the tensor is needed; a
kernel whose tensors have not landed waits. Both directions run at the same
rate, the sweep's single parameter.

All waiting is a composition of max/+ recursions over transfer durations
with a fixed processing order, so throughput is non-decreasing in bandwidth
and hits exactly 1.0 once every transfer fits its window.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction

from .analysis import compute_inactive_periods, compute_memory_timeline
from .trace import Trace


@dataclass(frozen=True)
class RooflinePoint:
    bandwidth: float            # bytes per microsecond, both directions
    normalized_throughput: float


def _ceil_div(nbytes: int, rate: float) -> int:
    if float(rate).is_integer():
        return -(-nbytes // int(rate))
    return math.ceil(Fraction(nbytes) / Fraction(rate))


def _total_time(trace: Trace, bandwidth: float) -> int:
    """One iteration under the roofline policy at one bandwidth."""
    n = trace.num_kernels
    durations = [k.duration_us for k in trace.kernels]
    periods = compute_inactive_periods(trace)

    by_id = trace.tensor_by_id()

    def ready_kernel(p):
        # wrap periods open after the tensor's last active kernel; when that
        # is the final kernel the transfer belongs to the next iteration and
        # cannot influence this one
        return p.start_kernel if not p.wraps else by_id[p.tensor_id].last_access + 1

    def need_kernel(p):
        if not p.wraps:
            return p.end_kernel + 1
        return n + by_id[p.tensor_id].first_access

    # fixed processing orders, independent of the bandwidth under test
    offload_order = sorted((p for p in periods if ready_kernel(p) < n),
                           key=lambda p: (ready_kernel(p), p.tensor_id,
                                          p.end_kernel))

    prefetch_order = sorted((p for p in periods if ready_kernel(p) < n),
                            key=lambda p: (need_kernel(p), p.tensor_id,
                                           p.start_kernel))

    offload_done: dict[int, int] = {}   # id(period) -> completion time
    offload_free = 0
    prefetch_free = 0
    offload_idx = 0
    prefetch_idx = 0
    now = 0
    for k in range(n):
        # offloads become ready when their first inactive kernel starts
        while (offload_idx < len(offload_order)
               and ready_kernel(offload_order[offload_idx]) == k):
            p = offload_order[offload_idx]
            start = max(now, offload_free)
            offload_free = start + _ceil_div(p.size_bytes, bandwidth)
            offload_done[id(p)] = offload_free
            offload_idx += 1
        # prefetches are served in need order; the kernel waits for its own
        while (prefetch_idx < len(prefetch_order)
               and need_kernel(prefetch_order[prefetch_idx]) == k):
            p = prefetch_order[prefetch_idx]
            start = max(offload_done[id(p)], prefetch_free)
            prefetch_free = start + _ceil_div(p.size_bytes, bandwidth)
            now = max(now, prefetch_free)
            prefetch_idx += 1
        now += durations[k]
    return now


def roofline_curve(trace: Trace, capacity: int,
                   bandwidth_list: list[float]) -> list[RooflinePoint]:
    """One point per bandwidth; the list must be positive and ascending."""
    if not bandwidth_list:
        raise ValueError("bandwidth list must be non-empty")
    if any(b <= 0 for b in bandwidth_list):
        raise ValueError("bandwidths must be positive")
    if list(bandwidth_list) != sorted(bandwidth_list):
        raise ValueError("bandwidths must be ascending")

    ideal = trace.iteration_length()
    pressured = compute_memory_timeline(trace).peak() > capacity
    points = []
    for b in bandwidth_list:
        if not pressured or ideal == 0:
            points.append(RooflinePoint(b, 1.0))
            continue
        total = _total_time(trace, b)
        points.append(RooflinePoint(b, 1.0 if total == ideal else ideal / total))
    return points


def saturation_bandwidth(trace: Trace) -> int:
    """A bandwidth provably past the curve's knee.

    At max-tensor-size bytes/us every transfer takes one microsecond, so no
    prefetch can finish more than (number of periods) microseconds after its
    offload window opens; any interior window at least that long is met.
    """
    periods = compute_inactive_periods(trace)
    max_size = max((p.size_bytes for p in periods), default=1)
    return max_size * max(1, len(periods))


def roofline_csv(points: list[RooflinePoint]) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["bandwidth_gbps", "normalized_throughput"])
    for p in points:
        w.writerow([p.bandwidth / 1000, f"{p.normalized_throughput:.6f}"])
    return out.getvalue()
