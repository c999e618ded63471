"""Serial migration channels with reservation timelines.

A channel models one direction (offload or prefetch) of one migration path
(GPU<->SSD or GPU<->host). Transfers are strictly serial: the planner books
non-overlapping intervals on the channel, the simulator executes at most one
transfer at a time. Transfer durations use exact ceiling division so every
estimate errs on the slow side.

A channel created with a `period` keeps its timeline consistent under
repetition: every booking also blocks its images one period earlier and
later (stored as shadow reservations). A booking that lands past the period
boundary therefore cannot collide with an early booking once the same
schedule runs every iteration.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass, field
from fractions import Fraction

OFFLOAD = "offload"
PREFETCH = "prefetch"


class ChannelConfigError(ValueError):
    """Unusable channel configuration, e.g. a non-positive rate."""


@dataclass(eq=False)
class Reservation:
    start: int
    end: int
    tensor_id: int
    channel: str
    shadow: bool = False  # periodic exclusion image, never a real transfer

    @property
    def duration(self) -> int:
        return self.end - self.start

    def interval(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(eq=False)
class BandwidthChannel:
    """One direction of one migration path.

    `rate` is in bytes per microsecond and may be fractional; durations are
    computed exactly via Fraction so no float rounding can make two runs of
    the same plan disagree.
    """

    name: str
    direction: str
    rate: float
    period: int | None = None
    reservations: list[Reservation] = field(default_factory=list)

    def __post_init__(self):
        if self.rate <= 0:
            raise ChannelConfigError(
                f"channel {self.name}.{self.direction}: rate must be > 0")
        if self.period is not None and self.period <= 0:
            self.period = None
        self._rate_exact = Fraction(self.rate)
        self._twins: dict[int, list[Reservation]] = {}

    @property
    def key(self) -> str:
        return f"{self.name}.{self.direction}"

    def transfer_duration(self, nbytes: int) -> int:
        """Microseconds to move `nbytes`: ceil(bytes / rate), exactly."""
        if nbytes < 0:
            raise ValueError("negative transfer size")
        if nbytes == 0:
            return 0
        if float(self.rate).is_integer():
            rate = int(self.rate)
            return -(-nbytes // rate)
        return math.ceil(Fraction(nbytes) / self._rate_exact)

    # -- booking ------------------------------------------------------------

    def reserve_earliest(self, ready: int, nbytes: int, tensor_id: int = -1) -> Reservation:
        """Book the earliest interval of the transfer length starting at or
        after `ready`; the interval is inserted into the channel."""
        duration = self.transfer_duration(nbytes)
        if duration <= 0:
            raise ValueError("reserve requires a non-empty transfer")
        t = ready
        for res in self.reservations:
            if res.start >= t + duration:
                break
            if res.end > t:
                t = res.end
        return self._insert(Reservation(t, t + duration, tensor_id, self.key))

    def reserve_latest(self, deadline: int, not_before: int, nbytes: int,
                       tensor_id: int = -1) -> Reservation | None:
        """Book the latest interval ending at or before `deadline` and
        starting at or after `not_before`; None when no such interval exists."""
        duration = self.transfer_duration(nbytes)
        if duration <= 0:
            raise ValueError("reserve requires a non-empty transfer")
        start = deadline - duration
        for res in reversed(self.reservations):
            if start < not_before:
                return None
            if res.start >= start + duration:
                continue
            if res.end <= start:
                break
            start = res.start - duration
        if start < not_before:
            return None
        return self._insert(Reservation(start, start + duration, tensor_id, self.key))

    def release(self, reservation: Reservation) -> None:
        """Undo a booking (and its periodic images)."""
        doomed = {id(reservation)}
        for twin in self._twins.pop(id(reservation), []):
            doomed.add(id(twin))
        self.reservations = [r for r in self.reservations if id(r) not in doomed]

    def record(self, start: int, end: int, tensor_id: int) -> Reservation:
        """Append an executed-transfer interval (simulator bookkeeping).

        Unlike reserve_*, this does not search for space: the caller is the
        executor and already serialized the channel.
        """
        res = Reservation(start, end, tensor_id, self.key)
        insort(self.reservations, res, key=lambda r: r.start)
        return res

    def _insert(self, res: Reservation) -> Reservation:
        insort(self.reservations, res, key=lambda r: r.start)
        if self.period is not None:
            twins = [
                Reservation(res.start - self.period, res.end - self.period,
                            res.tensor_id, self.key, shadow=True),
                Reservation(res.start + self.period, res.end + self.period,
                            res.tensor_id, self.key, shadow=True),
            ]
            for twin in twins:
                insort(self.reservations, twin, key=lambda r: r.start)
            self._twins[id(res)] = twins
        return res

    # -- reporting ------------------------------------------------------------

    def utilization(self, window_start: int, window_end: int) -> float:
        """Fraction of the window covered by booked transfers."""
        if window_start >= window_end:
            raise ValueError("window must be non-empty")
        busy = 0
        for res in self.reservations:
            if res.shadow:
                continue
            busy += max(0, min(res.end, window_end) - max(res.start, window_start))
        return busy / (window_end - window_start)


def transfer_duration(channel: BandwidthChannel, nbytes: int) -> int:
    return channel.transfer_duration(nbytes)


def channel_utilization(channel: BandwidthChannel, window_start: int,
                        window_end: int) -> float:
    return channel.utilization(window_start, window_end)


# --- channel-set configuration ----------------------------------------------

@dataclass(frozen=True)
class ChannelRates:
    """Per-direction rates (bytes/us) for the SSD path and the optional host
    path. This is the scenario-file channel block in object form."""

    ssd_offload: float
    ssd_prefetch: float
    host_offload: float | None = None
    host_prefetch: float | None = None

    @property
    def has_host(self) -> bool:
        return self.host_offload is not None and self.host_prefetch is not None

    @classmethod
    def symmetric(cls, ssd: float, host: float | None = None) -> "ChannelRates":
        return cls(ssd, ssd, host, host)

    @classmethod
    def from_config(cls, blocks: list[dict]) -> "ChannelRates":
        """Build from scenario-config channel blocks
        {name, offload_rate_bytes_per_us, prefetch_rate_bytes_per_us}."""
        rates: dict[str, tuple[float, float]] = {}
        for block in blocks:
            rates[block["name"]] = (
                block["offload_rate_bytes_per_us"],
                block["prefetch_rate_bytes_per_us"],
            )
        if "ssd" not in rates:
            raise ChannelConfigError("scenario config must define an 'ssd' channel")
        host = rates.get("host")
        return cls(
            ssd_offload=rates["ssd"][0],
            ssd_prefetch=rates["ssd"][1],
            host_offload=host[0] if host else None,
            host_prefetch=host[1] if host else None,
        )


@dataclass
class ChannelPair:
    offload: BandwidthChannel
    prefetch: BandwidthChannel


def build_channels(rates: ChannelRates, period: int | None = None
                   ) -> dict[str, ChannelPair]:
    """Fresh, empty channel pairs keyed by device name ('ssd', 'host')."""
    pairs = {
        "ssd": ChannelPair(
            BandwidthChannel("ssd", OFFLOAD, rates.ssd_offload, period),
            BandwidthChannel("ssd", PREFETCH, rates.ssd_prefetch, period),
        )
    }
    if rates.has_host:
        pairs["host"] = ChannelPair(
            BandwidthChannel("host", OFFLOAD, rates.host_offload, period),
            BandwidthChannel("host", PREFETCH, rates.host_prefetch, period),
        )
    return pairs
