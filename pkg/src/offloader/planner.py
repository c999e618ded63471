"""Lifetime-aware migration planning.

The planner turns a trace plus a GPU capacity into a schedule of paired
offload/prefetch transfers. It works greedily: while some kernel's required
memory exceeds capacity, it evaluates every remaining inactive period,
schedules a trial offload as early as the offload channel allows and a trial
prefetch as late as the prefetch channel allows, scores the candidate, and
commits the single best one.

Scoring: a candidate's benefit is (tensor size) x (total duration of the
kernels that are over capacity and fully covered by the scheduled off-GPU
window); its cost is the offload duration plus the prefetch duration. The
committed candidate maximizes benefit/cost, with ties broken by lowest
tensor id then earliest period start for reproducibility. Candidates whose
window covers no over-capacity kernel are skipped: committing them would
spend bandwidth without relieving any pressure.

Destinations: SSD is tried first; when no SSD window fits, the host path is
tried, subject to a byte cap on planned host occupancy. Candidates that fit
neither are skipped for the round.

Wrap-around periods of global tensors get a prefetch deadline in the next
iteration (iteration length + first-use start time). Planning channels are
created with a period equal to the iteration length so those bookings stay
conflict-free when the plan repeats every iteration.

The loop ends when the adjusted timeline fits capacity or no scoreable
candidate remains; leftover over-capacity kernels are returned as a warning
(the simulator's runtime fallback handles them). Finally every prefetch that
completes exactly when its tensor is next needed is flagged urgent so the
runtime engine can prioritize it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

from .analysis import (
    InactivePeriod,
    MemoryTimeline,
    compute_inactive_periods,
    compute_memory_timeline,
    per_kernel_active_bytes,
)
from .bandwidth import BandwidthChannel, ChannelPair, ChannelRates, Reservation, build_channels
from .trace import TensorKind, Trace

log = logging.getLogger("offloader.planner")

PLAN_FORMAT_VERSION = 1

SSD = "SSD"
CPU = "CPU"
GPU = "GPU"


class UnsatisfiableTraceError(ValueError):
    """Some kernel's actively-used bytes alone exceed capacity."""

    def __init__(self, kernel_index: int, active_bytes: int, capacity: int):
        super().__init__(
            f"kernel {kernel_index} uses {active_bytes} bytes actively, "
            f"more than capacity {capacity}; no offloading plan can help")
        self.kernel_index = kernel_index


@dataclass(frozen=True)
class PlanEntry:
    tensor_id: int
    action: str           # "offload" | "prefetch"
    trigger_time: int     # scheduled transfer start (us)
    deadline: int         # scheduled transfer completion (us)
    target: str           # SSD | CPU for offloads, GPU for prefetches
    urgent: bool = False


@dataclass
class CandidateWindow:
    """A feasible off-GPU window: offload done at `t_offloaded`, prefetch
    starts at `t_prefetch`."""

    t_offloaded: int
    t_prefetch: int
    offload_reservation: Reservation
    prefetch_reservation: Reservation
    destination: str


@dataclass(frozen=True)
class Benefit:
    value: int                      # bytes x microseconds of relieved pressure
    critical_kernels: frozenset[int]


@dataclass(frozen=True)
class CommittedMigration:
    """What the loop committed each round, in commit order. Not part of the
    plan file; kept for verification and inspection."""

    tensor_id: int
    start_kernel: int
    end_kernel: int
    wraps: bool
    destination: str
    offload_interval: tuple[int, int]
    prefetch_interval: tuple[int, int]
    benefit: int
    cost: int
    relieved_kernels: tuple[int, ...]


@dataclass
class MigrationPlan:
    entries: list[PlanEntry]
    residual_timeline: MemoryTimeline
    planned_host_bytes: int
    over_capacity_kernels: list[int]
    capacity_bytes: int
    committed: list[CommittedMigration]

    @property
    def warning(self) -> bool:
        return bool(self.over_capacity_kernels)


# --- window construction -----------------------------------------------------

def _period_times(period: InactivePeriod, trace: Trace,
                  starts: list[int], iteration: int) -> tuple[int, int]:
    """(earliest offload start, prefetch completion deadline) for a period.

    Wrap-around periods run from the end of the tensor's last active kernel
    to its first use in the next iteration, so both bounds come from the
    bounding accesses (the period's kernel indices alone are ambiguous at
    the boundary).
    """
    if not period.wraps:
        return starts[period.start_kernel], starts[period.end_kernel + 1]
    tensor = trace.tensor_by_id()[period.tensor_id]
    ready = starts[tensor.last_access] + trace.kernels[tensor.last_access].duration_us
    deadline = iteration + starts[tensor.first_access]
    return ready, deadline


def candidate_window(period: InactivePeriod, trace: Trace,
                     offload_channel: BandwidthChannel,
                     prefetch_channel: BandwidthChannel,
                     destination: str) -> CandidateWindow | None:
    """Try to schedule one period on one channel pair.

    On success the reservations are live in the channels (release them to
    roll back); on failure everything is rolled back and None returned.
    """
    starts = trace.kernel_start_times()
    iteration = trace.iteration_length()
    ready, deadline = _period_times(period, trace, starts, iteration)

    size = period.size_bytes
    # a transfer longer than the whole iteration can never repeat cleanly
    if (offload_channel.transfer_duration(size) > iteration
            or prefetch_channel.transfer_duration(size) > iteration):
        return None

    offload = offload_channel.reserve_earliest(ready, size, period.tensor_id)
    t_offloaded = offload.end
    prefetch = prefetch_channel.reserve_latest(deadline, t_offloaded, size,
                                               period.tensor_id)
    if prefetch is None or not t_offloaded < prefetch.start:
        if prefetch is not None:
            prefetch_channel.release(prefetch)
        offload_channel.release(offload)
        return None
    return CandidateWindow(t_offloaded, prefetch.start, offload, prefetch,
                           destination)


def _host_peak_occupancy(intervals: list[tuple[int, int, int]],
                         lo: int, hi: int) -> int:
    """Peak summed size of (start, end, size) intervals inside [lo, hi]."""
    points = {lo} | {s for s, _, _ in intervals if lo <= s <= hi}
    peak = 0
    for p in points:
        peak = max(peak, sum(sz for s, e, sz in intervals if s <= p < e))
    return peak


def select_destination(period: InactivePeriod, trace: Trace,
                       ssd_channels: ChannelPair,
                       host_channels: ChannelPair | None,
                       host_cap: int,
                       host_occupancy: list[tuple[int, int, int]]) -> str | None:
    """SSD when an SSD window fits, else CPU when a host window fits under
    the host byte cap, else None. All trial bookings are rolled back."""
    window = _attempt(period, trace, ssd_channels, host_channels, host_cap,
                      host_occupancy)
    if window is None:
        return None
    _release(window, ssd_channels, host_channels)
    return window.destination


def _release(window: CandidateWindow, ssd: ChannelPair,
             host: ChannelPair | None) -> None:
    pair = ssd if window.destination == SSD else host
    pair.offload.release(window.offload_reservation)
    pair.prefetch.release(window.prefetch_reservation)


def _attempt(period: InactivePeriod, trace: Trace, ssd: ChannelPair,
             host: ChannelPair | None, host_cap: int,
             host_occupancy: list[tuple[int, int, int]]) -> CandidateWindow | None:
    window = candidate_window(period, trace, ssd.offload, ssd.prefetch, SSD)
    if window is not None:
        return window
    if host is None:
        return None
    window = candidate_window(period, trace, host.offload, host.prefetch, CPU)
    if window is None:
        return None
    occupied = _host_peak_occupancy(host_occupancy, window.t_offloaded,
                                    window.t_prefetch)
    if occupied + period.size_bytes > host_cap:
        _release(window, ssd, host)
        return None
    return window


# --- benefit ------------------------------------------------------------------

def _covered_kernels(period: InactivePeriod, window: CandidateWindow,
                     trace: Trace, starts: list[int], iteration: int) -> list[int]:
    """Kernels whose full execution interval lies inside the off-GPU window."""
    durations = [k.duration_us for k in trace.kernels]
    lo, hi = window.t_offloaded, window.t_prefetch

    def contained(k: int, shift: int = 0) -> bool:
        s = starts[k] + shift
        return s >= lo and s + durations[k] <= hi

    if not period.wraps:
        return [k for k in range(period.start_kernel, period.end_kernel + 1)
                if contained(k)]
    tensor = trace.tensor_by_id()[period.tensor_id]
    covered = [k for k in range(tensor.last_access + 1, trace.num_kernels)
               if contained(k)]
    covered += [k for k in range(0, tensor.first_access)
                if contained(k, shift=iteration)]
    return covered


def candidate_benefit(window: CandidateWindow, period: InactivePeriod,
                      residual: MemoryTimeline, capacity: int,
                      trace: Trace) -> Benefit:
    """size x (summed duration of over-capacity kernels covered by the window)."""
    starts = trace.kernel_start_times()
    iteration = trace.iteration_length()
    covered = _covered_kernels(period, window, trace, starts, iteration)
    critical = [k for k in covered if residual.per_kernel_bytes[k] > capacity]
    value = period.size_bytes * sum(trace.kernels[k].duration_us for k in critical)
    return Benefit(value=value, critical_kernels=frozenset(critical))


# --- the main loop -------------------------------------------------------------

def plan_migrations(trace: Trace, capacity: int, rates: ChannelRates,
                    host_cap: int = 0) -> MigrationPlan:
    """Run the greedy planning loop; see the module docstring for the rules.

    Raises UnsatisfiableTraceError when some kernel's active bytes alone
    exceed capacity. Returns a plan with `over_capacity_kernels` set (the
    warning flag) when pressure remains after all viable candidates ran out.
    """
    active = per_kernel_active_bytes(trace)
    for k, b in enumerate(active):
        if b > capacity:
            raise UnsatisfiableTraceError(k, b, capacity)

    starts = trace.kernel_start_times()
    iteration = trace.iteration_length()
    residual = compute_memory_timeline(trace).copy()
    periods = sorted(compute_inactive_periods(trace),
                     key=lambda p: (p.tensor_id, p.start_kernel))
    channels = build_channels(rates, period=iteration if iteration > 0 else None)
    ssd = channels["ssd"]
    host = channels.get("host")

    entries: list[PlanEntry] = []
    committed: list[CommittedMigration] = []
    host_occupancy: list[tuple[int, int, int]] = []

    while residual.per_kernel_bytes and residual.peak() > capacity:
        best = None  # (benefit_value, cost, period, placement)
        for period in periods:
            window = _attempt(period, trace, ssd, host, host_cap, host_occupancy)
            if window is None:
                continue
            benefit = candidate_benefit(window, period, residual, capacity, trace)
            cost = (window.offload_reservation.duration
                    + window.prefetch_reservation.duration)
            placement = (window.destination,
                         window.offload_reservation.interval(),
                         window.prefetch_reservation.interval())
            _release(window, ssd, host)
            if benefit.value == 0:
                continue
            # strict ratio comparison in exact integer arithmetic
            if best is None or benefit.value * best[1] > best[0] * cost:
                best = (benefit.value, cost, period, placement)
        if best is None:
            break

        benefit_value, cost, period, placement = best
        window = _attempt(period, trace, ssd, host, host_cap, host_occupancy)
        assert window is not None and (
            window.destination,
            window.offload_reservation.interval(),
            window.prefetch_reservation.interval(),
        ) == placement, "winner re-booking diverged from its evaluation"

        relieved = _covered_kernels(period, window, trace, starts, iteration)
        for k in relieved:
            residual.per_kernel_bytes[k] -= period.size_bytes
        if window.destination == CPU:
            host_occupancy.append(
                (window.t_offloaded, window.t_prefetch, period.size_bytes))
        entries.append(PlanEntry(
            period.tensor_id, "offload",
            window.offload_reservation.start, window.offload_reservation.end,
            window.destination))
        entries.append(PlanEntry(
            period.tensor_id, "prefetch",
            window.prefetch_reservation.start, window.prefetch_reservation.end,
            GPU))
        committed.append(CommittedMigration(
            tensor_id=period.tensor_id,
            start_kernel=period.start_kernel,
            end_kernel=period.end_kernel,
            wraps=period.wraps,
            destination=window.destination,
            offload_interval=window.offload_reservation.interval(),
            prefetch_interval=window.prefetch_reservation.interval(),
            benefit=benefit_value,
            cost=cost,
            relieved_kernels=tuple(relieved),
        ))
        periods.remove(period)
        log.debug("committed tensor %d period [%d,%d] to %s, benefit %d cost %d",
                  period.tensor_id, period.start_kernel, period.end_kernel,
                  window.destination, benefit_value, cost)

    over = [k for k, b in enumerate(residual.per_kernel_bytes) if b > capacity]
    planned_host = _host_peak_occupancy(
        host_occupancy,
        min((s for s, _, _ in host_occupancy), default=0),
        max((e for _, e, _ in host_occupancy), default=0),
    ) if host_occupancy else 0

    entries.sort(key=lambda e: (e.trigger_time, e.tensor_id,
                                0 if e.action == "offload" else 1))
    plan = MigrationPlan(
        entries=entries,
        residual_timeline=residual,
        planned_host_bytes=planned_host,
        over_capacity_kernels=over,
        capacity_bytes=capacity,
        committed=committed,
    )
    return mark_urgent(plan, trace)


def mark_urgent(plan: MigrationPlan, trace: Trace) -> MigrationPlan:
    """Flag zero-slack prefetches: completion deadline equals the start time
    of the tensor's next active kernel."""
    starts = trace.kernel_start_times()
    iteration = trace.iteration_length()
    by_id = trace.tensor_by_id()

    def need_time_at_or_after(tensor_id: int, t: int) -> int | None:
        tensor = by_id[tensor_id]
        candidates = [starts[a] for a in tensor.accesses if starts[a] >= t]
        if tensor.kind is TensorKind.GLOBAL:
            wrap_need = iteration + starts[tensor.first_access]
            if wrap_need >= t:
                candidates.append(wrap_need)
        return min(candidates, default=None)

    flagged = []
    for e in plan.entries:
        if e.action == "prefetch":
            need = need_time_at_or_after(e.tensor_id, e.deadline)
            flagged.append(replace(e, urgent=(need == e.deadline)))
        else:
            flagged.append(replace(e, urgent=False))
    plan.entries = flagged
    return plan


# --- plan file ---------------------------------------------------------------

def write_plan(plan: MigrationPlan) -> bytes:
    """Header line with residual pressure and warnings, then one entry per line."""
    lines = [json.dumps({
        "version": PLAN_FORMAT_VERSION,
        "capacity_bytes": plan.capacity_bytes,
        "residual_peak_bytes": plan.residual_timeline.peak(),
        "planned_host_bytes": plan.planned_host_bytes,
        "over_capacity_kernels": plan.over_capacity_kernels,
    })]
    for e in plan.entries:
        lines.append(json.dumps({
            "tensor": e.tensor_id,
            "action": e.action,
            "trigger_us": e.trigger_time,
            "deadline_us": e.deadline,
            "target": e.target,
            "urgent": e.urgent,
        }))
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_plan(data: bytes | str) -> tuple[dict, list[PlanEntry]]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty plan file")
    header = json.loads(lines[0])
    if header.get("version") != PLAN_FORMAT_VERSION:
        raise ValueError(f"unsupported plan version {header.get('version')!r}")
    entries = []
    for ln in lines[1:]:
        obj = json.loads(ln)
        entries.append(PlanEntry(
            tensor_id=obj["tensor"],
            action=obj["action"],
            trigger_time=obj["trigger_us"],
            deadline=obj["deadline_us"],
            target=obj["target"],
            urgent=obj["urgent"],
        ))
    return header, entries
