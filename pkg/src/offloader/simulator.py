"""Discrete-event execution of a trace under a migration plan.

The engine walks the kernels in order, keeping a location table (tensor ->
GPU / SSD / host, plus an in-flight flag) and per-direction serial transfer
channels. Before a kernel may launch:

1. every tensor it uses must be GPU resident and not in flight; a missing
   tensor is fetched immediately with urgent priority, a queued transfer of
   a needed tensor is promoted (prefetch) or cancelled (not-yet-started
   offload), and the kernel stalls until the tensor lands;
2. the kernel's new allocations must fit capacity; otherwise the engine
   synchronously evicts the resident inactive tensor whose next use is
   farthest in the future (one eviction in flight at a time, re-evaluating
   after each completes) and counts an emergency offload.

Planned entries are issued when simulated time reaches their trigger;
urgent transfers jump ahead of queued non-urgent ones, but a running
transfer is never aborted. GPU memory is released when an offload
completes and re-reserved when a prefetch starts, matching the planner's
accounting. Simultaneous events process as completions, then the kernel
launch attempt, then plan issues, with ties broken by tensor id.

Plans whose prefetch triggers lie past the iteration end describe the
steady state (the schedule repeats every iteration), so the engine folds
them: those transfers run at (trigger - iteration) with the tensor starting
the iteration at its offload destination, and a transfer that straddles the
boundary starts the iteration already in flight.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import logging
from bisect import bisect_right
from dataclasses import dataclass, field

from .analysis import compute_memory_timeline, per_kernel_active_bytes
from .bandwidth import BandwidthChannel, ChannelRates
from .planner import MigrationPlan, PlanEntry
from .trace import TensorKind, Trace

log = logging.getLogger("offloader.simulator")

_GPU = "gpu"
_DEVICE_OF_TARGET = {"SSD": "ssd", "CPU": "host"}


class SimulationError(RuntimeError):
    """The trace cannot execute under the given capacity/channel setup."""


class ConfigurationError(ValueError):
    """The policy's inputs are incomplete (e.g. missing layer ids)."""


@dataclass
class SimReport:
    total_time: int
    ideal_time: int
    per_kernel_start: list[int]
    stall_per_kernel: list[int]
    per_kernel_resident: list[int]
    stall_time_total: int
    peak_resident_bytes: int
    channel_utilization: dict[str, float]
    emergency_offloads: int
    throughput_vs_ideal: float


def simulate_ideal(trace: Trace) -> int:
    """Iteration time with infinite GPU memory: the sum of kernel durations."""
    return trace.iteration_length()


@dataclass
class _Transfer:
    tensor_id: int
    nbytes: int
    action: str            # "offload" | "prefetch"
    device: str            # "ssd" | "host": target for offloads, source for prefetches
    urgent: bool = False
    emergency: bool = False
    started: bool = False
    end: int | None = None


@dataclass
class _ChannelState:
    recorder: BandwidthChannel
    queue: list[_Transfer] = field(default_factory=list)
    running: _Transfer | None = None


class _LayerPolicy:
    """Coarse per-layer batching: when execution leaves a layer block, all of
    that layer's still-needed tensors are offloaded as one batch; prefetch
    batches run one block ahead of execution, each triggered when the
    previous batch has fully landed."""

    def __init__(self, engine: "_Engine", layer_map: dict[int, int] | None):
        trace = engine.trace
        layers = []
        for k in trace.kernels:
            if k.layer is None:
                raise ConfigurationError(f"kernel {k.index} has no layer id")
            layers.append(k.layer)
        self.tensor_layer: dict[int, int] = {}
        for t in trace.tensors:
            layer = (layer_map or {}).get(t.id, t.layer)
            if layer is None:
                raise ConfigurationError(f"tensor {t.id} has no layer id")
            self.tensor_layer[t.id] = layer

        self.blocks: list[tuple[int, int, int]] = []  # (layer, first_k, last_k)
        for k, layer in enumerate(layers):
            if self.blocks and self.blocks[-1][0] == layer:
                layer_id, first, _ = self.blocks[-1]
                self.blocks[-1] = (layer_id, first, k)
            else:
                self.blocks.append((layer, k, k))
        self.block_of_kernel = []
        for i, (_, first, last) in enumerate(self.blocks):
            self.block_of_kernel.extend([i] * (last - first + 1))

        self.engine = engine
        self.exec_block = 0
        self.next_batch = 0
        self.outstanding: set[int] = set()  # ids of in-flight batch prefetches

    def _block_tensors(self, block: int) -> list[int]:
        _, first, last = self.blocks[block]
        ids = set()
        for k in range(first, last + 1):
            ids.update(self.engine.active_at[k])
        return sorted(ids)

    def on_start(self, now: int) -> None:
        self.maybe_issue(now)

    def on_kernel_launched(self, k: int, now: int) -> None:
        self.exec_block = self.block_of_kernel[k]
        self.maybe_issue(now)

    def on_kernel_end(self, k: int, now: int) -> None:
        eng = self.engine
        block = self.block_of_kernel[k]
        if k != self.blocks[block][2]:
            return
        layer = self.blocks[block][0]
        victims = [t for t in sorted(self.tensor_layer) if
                   self.tensor_layer[t] == layer
                   and eng.location.get(t) == _GPU
                   and t not in eng.engaged
                   and eng.next_use(t, k) is not None]
        for t in victims:
            eng.enqueue(_Transfer(t, eng.size[t], "offload", "ssd"), now)
        self.maybe_issue(now)

    def on_transfer_complete(self, tr: _Transfer, now: int) -> None:
        self.outstanding.discard(id(tr))
        if not self.outstanding:
            self.maybe_issue(now)

    def maybe_issue(self, now: int) -> None:
        eng = self.engine
        while (not self.outstanding and self.next_batch < len(self.blocks)
               and self.next_batch <= self.exec_block + 1):
            batch = self.next_batch
            self.next_batch += 1
            for t in self._block_tensors(batch):
                if eng.location.get(t) in ("ssd", "host") and t not in eng.engaged:
                    tr = _Transfer(t, eng.size[t], "prefetch", eng.location[t])
                    eng.enqueue(tr, now)
                    self.outstanding.add(id(tr))


class _Engine:
    def __init__(self, trace: Trace, capacity: int, rates: ChannelRates,
                 entries: list[PlanEntry]):
        self.trace = trace
        self.capacity = capacity
        n = trace.num_kernels
        self.durations = [k.duration_us for k in trace.kernels]
        self.active_at: list[list[int]] = [[] for _ in range(n)]
        self.size: dict[int, int] = {}
        self.accesses: dict[int, tuple[int, ...]] = {}
        self.is_global: dict[int, bool] = {}
        for t in trace.tensors:
            self.size[t.id] = t.size_bytes
            self.accesses[t.id] = t.accesses
            self.is_global[t.id] = t.kind is TensorKind.GLOBAL
            for a in t.accesses:
                self.active_at[a].append(t.id)
        for lst in self.active_at:
            lst.sort()

        active = per_kernel_active_bytes(trace)
        for k, b in enumerate(active):
            if b > capacity:
                raise SimulationError(
                    f"kernel {k} actively uses {b} bytes, above capacity {capacity}")

        self.channels: dict[tuple[str, str], _ChannelState] = {
            ("ssd", "offload"): _ChannelState(
                BandwidthChannel("ssd", "offload", rates.ssd_offload)),
            ("ssd", "prefetch"): _ChannelState(
                BandwidthChannel("ssd", "prefetch", rates.ssd_prefetch)),
        }
        if rates.has_host:
            self.channels[("host", "offload")] = _ChannelState(
                BandwidthChannel("host", "offload", rates.host_offload))
            self.channels[("host", "prefetch")] = _ChannelState(
                BandwidthChannel("host", "prefetch", rates.host_prefetch))

        # events: (time, priority, tensor_id, seq, kind, payload)
        self.events: list = []
        self.seq = 0
        self.location: dict[int, str | None] = {
            t.id: (_GPU if t.kind is TensorKind.GLOBAL else None)
            for t in trace.tensors
        }
        self.engaged: dict[int, _Transfer] = {}
        self.resident = 0
        self.peak_resident = 0
        self.emergency_offloads = 0
        self.policy: _LayerPolicy | None = None
        self._install_plan(entries)

        # initial residency: tensors on GPU (including ones whose offload is
        # already running) plus space reserved by in-flight prefetch tails
        for t in trace.tensors:
            if self.location[t.id] == _GPU:
                self._grow(t.size_bytes)
        for tr in self.engaged.values():
            if tr.action == "prefetch":
                self._grow(tr.nbytes)

    # -- plan folding ---------------------------------------------------------

    def _install_plan(self, entries: list[PlanEntry]) -> None:
        iteration = self.trace.iteration_length()
        by_tensor: dict[int, list[PlanEntry]] = {}
        for e in entries:
            by_tensor.setdefault(e.tensor_id, []).append(e)

        for tensor_id, group in sorted(by_tensor.items()):
            group.sort(key=lambda e: e.trigger_time)
            loc = _GPU
            tail: tuple[PlanEntry, str] | None = None
            for e in group:
                if e.trigger_time >= iteration > 0:
                    self._push(e.trigger_time - iteration, 2, tensor_id, "issue",
                               PlanEntry(e.tensor_id, e.action,
                                         e.trigger_time - iteration,
                                         e.deadline - iteration,
                                         e.target, e.urgent))
                    continue
                self._push(e.trigger_time, 2, tensor_id, "issue", e)
                if e.deadline > iteration:
                    source = loc  # device the crossing prefetch reads from
                    tail = (e, source)
                    loc = _GPU if e.action == "prefetch" else _DEVICE_OF_TARGET[e.target]
                else:
                    loc = _GPU if e.action == "prefetch" else _DEVICE_OF_TARGET[e.target]
            # steady state at the iteration boundary = the initial state here
            if tail is not None and tail[0].deadline > iteration:
                entry, source = tail
                self._install_tail(entry, source, entry.deadline - iteration)
            elif loc != _GPU:
                self.location[tensor_id] = loc

    def _install_tail(self, entry: PlanEntry, source: str, end: int) -> None:
        """A transfer that straddles the boundary is already running at t=0."""
        if entry.action == "offload":
            device, direction = _DEVICE_OF_TARGET[entry.target], "offload"
        else:
            device, direction = source, "prefetch"
        state = self.channels[(device, direction)]
        assert state.running is None, "two boundary-straddling transfers on one channel"
        tr = _Transfer(entry.tensor_id, self.size[entry.tensor_id], entry.action,
                       device, urgent=entry.urgent, started=True, end=end)
        state.running = tr
        state.recorder.record(0, end, entry.tensor_id)
        self.engaged[entry.tensor_id] = tr
        self._push(end, 0, entry.tensor_id, "complete", tr)
        # memory of an in-flight tensor is held either way: an offload has not
        # released it yet, a prefetch reserved it at start
        self.location[entry.tensor_id] = _GPU if entry.action == "offload" else source

    # -- primitive state changes -----------------------------------------------

    def _push(self, time: int, prio: int, tensor_id: int, kind: str, payload) -> None:
        self.seq += 1
        heapq.heappush(self.events, (time, prio, tensor_id, self.seq, kind, payload))

    def _grow(self, nbytes: int) -> None:
        self.resident += nbytes
        if self.resident > self.peak_resident:
            self.peak_resident = self.resident

    def next_use(self, tensor_id: int, k: int) -> int | None:
        """First access strictly after kernel k; globals wrap to the next
        iteration, intermediates past their last access return None."""
        acc = self.accesses[tensor_id]
        idx = bisect_right(acc, k)
        if idx < len(acc):
            return acc[idx]
        if self.is_global[tensor_id]:
            return self.trace.num_kernels + acc[0]
        return None

    def enqueue(self, tr: _Transfer, now: int, front: bool = False) -> None:
        state = self.channels[(tr.device, "offload" if tr.action == "offload"
                               else "prefetch")]
        if front:
            state.queue.insert(0, tr)
        elif tr.urgent:
            pos = next((i for i, q in enumerate(state.queue) if not q.urgent),
                       len(state.queue))
            state.queue.insert(pos, tr)
        else:
            state.queue.append(tr)
        self.engaged[tr.tensor_id] = tr
        self._pump(state, now)

    def _cancel(self, tr: _Transfer) -> None:
        assert not tr.started
        for state in self.channels.values():
            if tr in state.queue:
                state.queue.remove(tr)
                break
        self.engaged.pop(tr.tensor_id, None)

    def _promote_front(self, tr: _Transfer, now: int) -> None:
        """A kernel is stalled on this queued transfer right now: it goes to
        the very front, ahead even of urgent-but-not-yet-needed entries (a
        memory-gated head must not starve it of the channel)."""
        for state in self.channels.values():
            if tr in state.queue:
                state.queue.remove(tr)
                tr.urgent = True
                state.queue.insert(0, tr)
                self._pump(state, now)
                return

    def _pump(self, state: _ChannelState, now: int) -> None:
        if state.running is not None or not state.queue:
            return
        head = state.queue[0]
        if head.action == "prefetch" and self.resident + head.nbytes > self.capacity:
            return  # no room to land it yet; retried after memory frees
        state.queue.pop(0)
        duration = state.recorder.transfer_duration(head.nbytes)
        head.started = True
        head.end = now + duration
        state.running = head
        state.recorder.record(now, head.end, head.tensor_id)
        if head.action == "prefetch":
            self._grow(head.nbytes)
        self._push(head.end, 0, head.tensor_id, "complete", head)

    def _pump_all(self, now: int) -> None:
        for state in self.channels.values():
            self._pump(state, now)

    def _complete(self, tr: _Transfer, now: int) -> None:
        state = self.channels[(tr.device, "offload" if tr.action == "offload"
                               else "prefetch")]
        assert state.running is tr
        state.running = None
        self.engaged.pop(tr.tensor_id, None)
        if tr.action == "offload":
            self.resident -= tr.nbytes
            self.location[tr.tensor_id] = tr.device
        else:
            self.location[tr.tensor_id] = _GPU
        self._pump_all(now)
        if self.policy is not None:
            self.policy.on_transfer_complete(tr, now)

    def _issue_entry(self, e: PlanEntry, now: int) -> None:
        loc = self.location.get(e.tensor_id)
        if e.tensor_id in self.engaged:
            return  # superseded by an urgent or emergency transfer
        if e.action == "offload":
            if loc != _GPU:
                return  # already evicted at runtime
            self.enqueue(_Transfer(e.tensor_id, self.size[e.tensor_id], "offload",
                                   _DEVICE_OF_TARGET[e.target], urgent=e.urgent), now)
        else:
            if loc not in ("ssd", "host"):
                return  # already back (or never left)
            self.enqueue(_Transfer(e.tensor_id, self.size[e.tensor_id], "prefetch",
                                   loc, urgent=e.urgent), now)

    def _drain(self, upto: int, issues_at_upto: bool) -> None:
        while self.events:
            time, prio, _, _, _, _ = self.events[0]
            if time > upto:
                break
            if time == upto and prio != 0 and not issues_at_upto:
                break
            _, _, _, _, kind, payload = heapq.heappop(self.events)
            if kind == "complete":
                self._complete(payload, time)
            else:
                self._issue_entry(payload, time)

    # -- kernel launch machinery -------------------------------------------------

    def _emergency_in_flight(self) -> bool:
        return any(tr.emergency for tr in self.engaged.values())

    def _pick_victim(self, k: int) -> int | None:
        needed = set(self.active_at[k])
        best = None
        for t, loc in self.location.items():
            if loc != _GPU or t in needed or t in self.engaged:
                continue
            use = self.next_use(t, k)
            if use is None:
                continue  # dead after this point; freed by the kernel loop
            if best is None or (use, -t) > (best[0], -best[1]):
                best = (use, t)
        return best[1] if best else None

    def _try_launch(self, k: int, now: int) -> bool:
        """Issue whatever kernel k needs; True when it can launch at `now`."""
        waiting = False
        mem_blocked = False
        for t in self.active_at[k]:
            tr = self.engaged.get(t)
            if tr is not None:
                if tr.action == "offload" and not tr.started:
                    self._cancel(tr)  # still on GPU; keep it
                    continue
                if tr.action == "prefetch":
                    if not tr.started:
                        self._promote_front(tr, now)
                        if not tr.started and self.resident + tr.nbytes > self.capacity:
                            mem_blocked = True
                    waiting = True
                else:
                    waiting = True  # running offload cannot be aborted
            elif self.location.get(t) in ("ssd", "host"):
                self.enqueue(_Transfer(t, self.size[t], "prefetch",
                                       self.location[t], urgent=True), now,
                             front=True)
                if not self.engaged[t].started and \
                        self.resident + self.size[t] > self.capacity:
                    mem_blocked = True
                waiting = True
        if not waiting:
            new_alloc = sum(self.size[t] for t in self.active_at[k]
                            if self.location.get(t) is None)
            if self.resident + new_alloc > self.capacity:
                mem_blocked = True
        if mem_blocked and not self._emergency_in_flight():
            victim = self._pick_victim(k)
            if victim is not None:
                tr = _Transfer(victim, self.size[victim], "offload", "ssd",
                               urgent=True, emergency=True)
                self.emergency_offloads += 1
                log.debug("emergency offload of tensor %d before kernel %d", victim, k)
                self.enqueue(tr, now)
        return not waiting and not mem_blocked

    def run(self) -> SimReport:
        n = self.trace.num_kernels
        per_start = [0] * n
        stalls = [0] * n
        per_resident = [0] * n
        now = 0
        if self.policy is not None:
            self.policy.on_start(now)
        for k in range(n):
            ready = now
            while True:
                self._drain(now, issues_at_upto=False)
                if self._try_launch(k, now):
                    break
                self._drain(now, issues_at_upto=True)
                if not self.events:
                    raise SimulationError(
                        f"simulation stuck before kernel {k}: no transfer can "
                        f"free enough memory")
                now = max(now, self.events[0][0])
            stalls[k] = now - ready
            per_start[k] = now
            for t in self.active_at[k]:
                assert self.location.get(t) == _GPU or self.location.get(t) is None
                if self.location.get(t) is None:
                    self.location[t] = _GPU
                    self._grow(self.size[t])
            per_resident[k] = self.resident
            if self.policy is not None:
                self.policy.on_kernel_launched(k, now)
            now += self.durations[k]
            for t in self.active_at[k]:
                if not self.is_global[t] and self.accesses[t][-1] == k:
                    assert t not in self.engaged
                    self.location[t] = None
                    self.resident -= self.size[t]
            self._pump_all(now)
            if self.policy is not None:
                self.policy.on_kernel_end(k, now)

        total = now
        ideal = sum(self.durations)
        utilization = {}
        for (device, direction), state in self.channels.items():
            utilization[f"{device}.{direction}"] = (
                state.recorder.utilization(0, total) if total > 0 else 0.0)
        return SimReport(
            total_time=total,
            ideal_time=ideal,
            per_kernel_start=per_start,
            stall_per_kernel=stalls,
            per_kernel_resident=per_resident,
            stall_time_total=sum(stalls),
            peak_resident_bytes=self.peak_resident,
            channel_utilization=utilization,
            emergency_offloads=self.emergency_offloads,
            throughput_vs_ideal=1.0 if total == ideal else ideal / total,
        )


def _entries_of(plan) -> list[PlanEntry]:
    if plan is None:
        return []
    if isinstance(plan, MigrationPlan):
        return plan.entries
    return list(plan)


def simulate(trace: Trace, plan, capacity: int, rates: ChannelRates) -> SimReport:
    """Execute the trace under a migration plan (a MigrationPlan, a list of
    entries, or None for no planned transfers)."""
    return _Engine(trace, capacity, rates, _entries_of(plan)).run()


def simulate_on_demand(trace: Trace, capacity: int, rates: ChannelRates) -> SimReport:
    """Baseline: no planning at all, every migration happens at point of need."""
    return _Engine(trace, capacity, rates, []).run()


def simulate_layer_granularity(trace: Trace, capacity: int, rates: ChannelRates,
                               layer_map: dict[int, int] | None = None) -> SimReport:
    """Baseline: batch offload/prefetch at whole-layer granularity.

    The policy only engages when the trace oversubscribes capacity; a trace
    that fits issues no transfers at all.
    """
    engine = _Engine(trace, capacity, rates, [])
    if compute_memory_timeline(trace).peak() > capacity:
        engine.policy = _LayerPolicy(engine, layer_map)
    return engine.run()


# --- report serialization -----------------------------------------------------

def report_json(report: SimReport) -> str:
    return json.dumps({
        "total_time_us": report.total_time,
        "ideal_time_us": report.ideal_time,
        "throughput_vs_ideal": report.throughput_vs_ideal,
        "stall_time_total_us": report.stall_time_total,
        "peak_resident_bytes": report.peak_resident_bytes,
        "emergency_offloads": report.emergency_offloads,
        "channel_utilization": report.channel_utilization,
    }, indent=2)


def timeline_csv(report: SimReport) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(["kernel", "start_us", "stall_us", "resident_bytes"])
    for k, (s, st, r) in enumerate(zip(report.per_kernel_start,
                                       report.stall_per_kernel,
                                       report.per_kernel_resident)):
        w.writerow([k, s, st, r])
    return out.getvalue()
