"""Brute-force replay of the greedy planning rounds.

Re-derives every round's candidate set from scratch with set-scan interval
placement (no sweep code shared with the planner) and checks that the
committed candidate of each round is the feasible candidate with the
maximum benefit/cost ratio under the documented tie rule.
"""

import math
from fractions import Fraction

from offloader import TensorKind, compute_inactive_periods


def _ceil(nbytes, rate):
    if float(rate).is_integer():
        return -(-nbytes // int(rate))
    return math.ceil(Fraction(nbytes) / Fraction(rate))


def _images(intervals, period_len):
    """Booked intervals plus their periodic fold images."""
    out = list(intervals)
    if period_len:
        for s, e in intervals:
            out.append((s - period_len, e - period_len))
            out.append((s + period_len, e + period_len))
    return out


def _overlaps(candidate, intervals):
    s, e = candidate
    return any(s < ie and is_ < e for is_, ie in intervals)


def _bf_earliest(intervals, ready, d, period_len):
    imgs = _images(intervals, period_len)
    starts = [ready] + [e for _, e in imgs if e > ready]
    feasible = [s for s in starts if not _overlaps((s, s + d), imgs)]
    return min(feasible)


def _bf_latest(intervals, deadline, not_before, d, period_len):
    imgs = _images(intervals, period_len)
    starts = [deadline - d] + [s - d for s, _ in imgs if s - d >= not_before]
    feasible = [s for s in starts
                if not_before <= s and s + d <= deadline
                and not _overlaps((s, s + d), imgs)]
    return max(feasible) if feasible else None


class GreedyOracle:
    def __init__(self, trace, capacity, rates, host_cap):
        self.trace = trace
        self.capacity = capacity
        self.rates = rates
        self.host_cap = host_cap
        self.starts = trace.kernel_start_times()
        self.durations = [k.duration_us for k in trace.kernels]
        self.iteration = sum(self.durations)
        self.by_id = trace.tensor_by_id()
        self.periods = sorted(
            compute_inactive_periods(trace),
            key=lambda p: (p.tensor_id, p.start_kernel))
        # brute-force residency scan for the starting timeline
        self.residual = []
        for k in range(trace.num_kernels):
            total = 0
            for t in trace.tensors:
                if t.kind is TensorKind.GLOBAL:
                    resident = True
                else:
                    resident = t.accesses[0] <= k <= t.accesses[-1]
                total += t.size_bytes if resident else 0
            self.residual.append(total)
        self.booked = {key: [] for key in
                       ("ssd.off", "ssd.pre", "host.off", "host.pre")}
        self.host_spans = []

    def _period_bounds(self, p):
        if not p.wraps:
            return self.starts[p.start_kernel], self.starts[p.end_kernel + 1]
        t = self.by_id[p.tensor_id]
        ready = self.starts[t.last_access] + self.durations[t.last_access]
        return ready, self.iteration + self.starts[t.first_access]

    def _window(self, p, dest):
        off_rate = (self.rates.ssd_offload if dest == "SSD"
                    else self.rates.host_offload)
        pre_rate = (self.rates.ssd_prefetch if dest == "SSD"
                    else self.rates.host_prefetch)
        if off_rate is None:
            return None
        d_off = _ceil(p.size_bytes, off_rate)
        d_pre = _ceil(p.size_bytes, pre_rate)
        if d_off > self.iteration or d_pre > self.iteration:
            return None
        ready, deadline = self._period_bounds(p)
        off_key = "ssd.off" if dest == "SSD" else "host.off"
        pre_key = "ssd.pre" if dest == "SSD" else "host.pre"
        o = _bf_earliest(self.booked[off_key], ready, d_off, self.iteration)
        t_offloaded = o + d_off
        f = _bf_latest(self.booked[pre_key], deadline, t_offloaded, d_pre,
                       self.iteration)
        if f is None or not t_offloaded < f:
            return None
        if dest == "CPU":
            points = [t_offloaded] + [s for s, _, _ in self.host_spans
                                      if t_offloaded <= s <= f]
            peak = max((sum(sz for s, e, sz in self.host_spans if s <= x < e)
                        for x in points), default=0)
            if peak + p.size_bytes > self.host_cap:
                return None
        return {"dest": dest, "off": (o, t_offloaded), "pre": (f, f + d_pre),
                "cost": d_off + d_pre}

    def _covered(self, p, lo, hi):
        if not p.wraps:
            rng = [(k, 0) for k in range(p.start_kernel, p.end_kernel + 1)]
        else:
            t = self.by_id[p.tensor_id]
            rng = [(k, 0) for k in range(t.last_access + 1, self.trace.num_kernels)]
            rng += [(k, self.iteration) for k in range(0, t.first_access)]
        return [k for k, shift in rng
                if self.starts[k] + shift >= lo
                and self.starts[k] + shift + self.durations[k] <= hi]

    def best_candidate(self):
        """(period, window, benefit) of the round's best choice, or None."""
        best = None
        for p in self.periods:
            window = self._window(p, "SSD") or self._window(p, "CPU")
            if window is None:
                continue
            covered = self._covered(p, window["off"][1], window["pre"][0])
            benefit = p.size_bytes * sum(
                self.durations[k] for k in covered
                if self.residual[k] > self.capacity)
            if benefit == 0:
                continue
            if best is None or Fraction(benefit, window["cost"]) > Fraction(
                    best[2], best[1]["cost"]):
                best = (p, window, benefit)
        return best

    def apply(self, p, window):
        off_key = "ssd.off" if window["dest"] == "SSD" else "host.off"
        pre_key = "ssd.pre" if window["dest"] == "SSD" else "host.pre"
        self.booked[off_key].append(window["off"])
        self.booked[pre_key].append(window["pre"])
        if window["dest"] == "CPU":
            self.host_spans.append((window["off"][1], window["pre"][0],
                                    p.size_bytes))
        for k in self._covered(p, window["off"][1], window["pre"][0]):
            self.residual[k] -= p.size_bytes
        self.periods.remove(p)


def verify_greedy_rounds(trace, capacity, rates, host_cap, plan):
    """Assert each committed round matches the brute-force argmax."""
    oracle = GreedyOracle(trace, capacity, rates, host_cap)
    for committed in plan.committed:
        assert max(oracle.residual, default=0) > capacity, \
            "planner committed a round after pressure was already resolved"
        best = oracle.best_candidate()
        assert best is not None, "planner committed where oracle found nothing"
        p, window, benefit = best
        assert (p.tensor_id, p.start_kernel, p.wraps) == (
            committed.tensor_id, committed.start_kernel, committed.wraps)
        assert window["dest"] == committed.destination
        assert window["off"] == committed.offload_interval
        assert window["pre"] == committed.prefetch_interval
        assert benefit == committed.benefit
        assert window["cost"] == committed.cost
        oracle.apply(p, window)
    # after the last commit either pressure is resolved or nothing viable remains
    if max(oracle.residual, default=0) > capacity:
        assert oracle.best_candidate() is None
    assert oracle.residual == plan.residual_timeline.per_kernel_bytes
