"""Vessel collector: reading cache, silent-monitor polling, emergency fan-out, payload assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from iwts.model import (
    InputError,
    IwtsError,
    MonitorId,
    ProtocolError,
    Reading,
    SimTime,
    Thresholds,
    VesselSnapshot,
)
from iwts.monitor import Classification, MonitorMessage, classify_reading
from iwts.netsim import UplinkState

log = logging.getLogger(__name__)


class Mode(str, Enum):
    NORMAL = "Normal"
    EMERGENCY = "Emergency"


class NothingToReport(IwtsError):
    """assemble_payload was called with an empty cache."""


@dataclass(frozen=True)
class Request:
    monitor: MonitorId


@dataclass(frozen=True)
class RequestAll:
    exclude: MonitorId | None = None


@dataclass(frozen=True)
class AssembleAndSend:
    pass


Action = Request | RequestAll | AssembleAndSend


@dataclass
class CacheEntry:
    reading: Reading
    received_at: SimTime


@dataclass
class Collector:
    """Aggregator for one vessel.

    Transitions return a list of actions for the event loop to carry out;
    nothing is sent from inside the collector.
    """

    vessel_id: str
    monitors: tuple[MonitorId, ...]
    thresholds: Thresholds
    timer_period: int = 60
    start: SimTime = 0
    cache: dict[MonitorId, CacheEntry] = field(default_factory=dict)
    mode: Mode = Mode.NORMAL
    last_uplink: SimTime | None = None
    # start of the timer window the last uplink fell in; cadence is judged on this grid
    last_uplink_slot: SimTime | None = None

    def __post_init__(self):
        for m in self.monitors:
            if m.vessel_id != self.vessel_id:
                raise InputError(f"monitor {m.address} belongs to {m.vessel_id}")
        self.reporting_interval = self.thresholds.normal_interval
        self.timer_deadline = self.start + self.timer_period * 1000

    def _any_candidate(self) -> bool:
        return any(
            classify_reading(e.reading, self.thresholds) is Classification.CANDIDATE
            for e in self.cache.values()
        )

    def _set_mode(self, mode: Mode) -> None:
        self.mode = mode
        if mode is Mode.EMERGENCY:
            self.reporting_interval = self.thresholds.emergency_interval
        else:
            self.reporting_interval = self.thresholds.normal_interval

    def on_monitor_message(self, msg: MonitorMessage, now: SimTime) -> list[Action]:
        if msg.source.vessel_id != self.vessel_id or msg.source not in self.monitors:
            log.warning("collector %s dropped message from %s", self.vessel_id, msg.source)
            raise ProtocolError(
                f"collector {self.vessel_id} got a message from {msg.source.vessel_id}/{msg.source.address}"
            )
        held = self.cache.get(msg.source)
        # PAN jitter can reorder; never replace a newer reading with an older one
        if held is None or msg.reading.at >= held.reading.at:
            self.cache[msg.source] = CacheEntry(msg.reading, now)
        else:
            held.received_at = now

        if msg.emergency_candidate and self.mode is Mode.NORMAL:
            self._set_mode(Mode.EMERGENCY)
            return [RequestAll(exclude=msg.source), AssembleAndSend()]
        return []

    def on_timer_expiry(self, now: SimTime) -> list[Action]:
        if now != self.timer_deadline:
            return []
        window_start = self.timer_deadline - self.timer_period * 1000
        actions: list[Action] = []
        for m in self.monitors:
            entry = self.cache.get(m)
            if entry is None or entry.received_at <= window_start:
                actions.append(Request(m))
        self.timer_deadline = now + self.timer_period * 1000
        if self.uplink_due(now):
            actions.append(AssembleAndSend())
        # leaving emergency is decided once per round, after this round's
        # uplink, so the last fast-cadence snapshot shows the all-clear
        if self.mode is Mode.EMERGENCY and not self._any_candidate():
            self._set_mode(Mode.NORMAL)
        return actions

    def uplink_due(self, now: SimTime) -> bool:
        if self.last_uplink_slot is None:
            return True
        return now - self.last_uplink_slot >= self.reporting_interval * 1000

    def assemble_payload(self, now: SimTime) -> VesselSnapshot:
        if not self.cache:
            raise NothingToReport(f"collector {self.vessel_id} has nothing to report")
        blocks: dict[str, Reading] = {}
        stale: list[MonitorId] = []
        for m in self.monitors:
            entry = self.cache.get(m)
            if entry is None:
                continue
            blocks[m.kind.value] = entry.reading
            if now - entry.received_at > 2 * self.timer_period * 1000:
                stale.append(m)
        return VesselSnapshot(self.vessel_id, now, stale_monitors=tuple(stale), **blocks)

    def record_uplink(self, now: SimTime) -> None:
        self.last_uplink = now
        self.last_uplink_slot = self.timer_deadline - self.timer_period * 1000


# -- uplink channel selection -------------------------------------------------


class Channel(str, Enum):
    THREE_G = "ThreeG"
    FALLBACK = "Fallback"


@dataclass(frozen=True)
class SendOutcome:
    channel: Channel
    departure: SimTime


@dataclass(frozen=True)
class SendFailure:
    retry_at: SimTime


def send_uplink(snapshot: VesselSnapshot, link_state: UplinkState, now: SimTime,
                backoff_ms: int = 5000) -> SendOutcome | SendFailure:
    """Pick the uplink channel for a snapshot at ``now``.

    3G when it is up, the slower fallback when only 3G is out, otherwise a
    failure carrying the retry instant. Loss on the chosen channel is the
    transmitter's concern.
    """
    if not link_state.three_g.in_outage(now):
        return SendOutcome(Channel.THREE_G, now)
    if not link_state.fallback.in_outage(now):
        return SendOutcome(Channel.FALLBACK, now)
    return SendFailure(now + backoff_ms)
