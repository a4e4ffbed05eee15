"""Monitor node: duplicate-suppressed periodic reporting and the passenger counter."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from iwts.model import (
    InputError,
    IwtsError,
    MonitorId,
    MonitorKind,
    NoDataYet,
    Passenger,
    Reading,
    SimTime,
    Thresholds,
    quantize,
)


class Classification(str, Enum):
    NORMAL = "Normal"
    CANDIDATE = "Candidate"


class PassengerEventKind(str, Enum):
    BOARDING = "Boarding"
    ALIGHTING = "Alighting"


class Reason(str, Enum):
    """Why a message left the monitor; used by the event log and tests."""

    PERIODIC = "periodic"
    CANDIDATE = "candidate"
    EVENT = "event"
    REPLY = "reply"


@dataclass(frozen=True)
class MonitorMessage:
    source: MonitorId
    reading: Reading
    emergency_candidate: bool
    in_reply_to_request: bool
    reason: Reason


def classify_reading(reading: Reading, thresholds: Thresholds) -> Classification:
    """A reading is a candidate when it alone breaks a local limit."""
    body = reading.body
    if reading.kind is MonitorKind.PASSENGER and body.weight > thresholds.max_weight:
        return Classification.CANDIDATE
    if reading.kind is MonitorKind.FREEBOARD and body.actual_value < thresholds.min_freeboard:
        return Classification.CANDIDATE
    return Classification.NORMAL


class Monitor:
    """State machine of one monitor.

    The owner (the event loop) calls ``on_sense``/``on_tick``/``on_request``
    and ships any returned message. After a call, ``next_tick`` may have
    moved earlier; the owner must then schedule a tick at the new time.
    Ticks at any other instant than ``next_tick`` are stale and ignored.
    """

    def __init__(self, id: MonitorId, thresholds: Thresholds, start: SimTime = 0):
        self.id = id
        self.thresholds = thresholds
        self.last_transmitted: Reading | None = None
        self.pending: Reading | None = None
        self.interval = thresholds.normal_interval
        self.next_tick = start

    def _is_candidate(self, reading: Reading | None) -> bool:
        return reading is not None and (
            classify_reading(reading, self.thresholds) is Classification.CANDIDATE
        )

    def _emit(self, reason: Reason) -> MonitorMessage:
        reading = self.pending
        self.last_transmitted = reading
        return MonitorMessage(
            source=self.id,
            reading=reading,
            emergency_candidate=self._is_candidate(reading),
            in_reply_to_request=reason is Reason.REPLY,
            reason=reason,
        )

    def _enter_emergency(self, now: SimTime) -> None:
        self.interval = self.thresholds.emergency_interval
        self.next_tick = min(self.next_tick, now + self.interval * 1000)

    def on_sense(self, reading: Reading, now: SimTime) -> MonitorMessage | None:
        if reading.source != self.id:
            raise InputError(f"{reading.kind.value} reading fed to {self.id.kind.value} monitor {self.id.address}")
        self.pending = reading
        if self._is_candidate(reading):
            self._enter_emergency(now)
            return self._emit(Reason.CANDIDATE)
        return None

    def on_tick(self, now: SimTime) -> MonitorMessage | None:
        if now != self.next_tick:
            return None
        msg = None
        if self.pending is not None and (
            self.last_transmitted is None
            or quantize(self.pending.body) != quantize(self.last_transmitted.body)
        ):
            msg = self._emit(Reason.PERIODIC)
        if self._is_candidate(self.pending):
            self.interval = self.thresholds.emergency_interval
        else:
            self.interval = self.thresholds.normal_interval
        self.next_tick = now + self.interval * 1000
        return msg

    def on_request(self, now: SimTime) -> MonitorMessage:
        if self.pending is None:
            raise NoDataYet(f"monitor {self.id.address} has no data yet")
        return self._emit(Reason.REPLY)


class PassengerCounter(Monitor):
    """Door-mounted counter; transmits on every boarding or alighting."""

    def __init__(self, id: MonitorId, thresholds: Thresholds, start: SimTime = 0):
        if id.kind is not MonitorKind.PASSENGER:
            raise InputError("passenger counter needs a passenger monitor id")
        super().__init__(id, thresholds, start)

    @property
    def count(self) -> int:
        return self.pending.body.count if self.pending else 0

    @property
    def weight(self) -> float:
        return self.pending.body.weight if self.pending else 0.0

    def reset(self, now: SimTime) -> None:
        """Empty vessel at the start of a loading session; nothing is sent."""
        self.pending = Reading(self.id, now, Passenger(0, 0.0))
        self.last_transmitted = None
        self.interval = self.thresholds.normal_interval

    def passenger_event(self, kind: PassengerEventKind, person_weight: float,
                        now: SimTime) -> MonitorMessage:
        if person_weight < 0:
            raise InputError(f"negative person weight: {person_weight}")
        count, weight = self.count, self.weight
        if kind is PassengerEventKind.BOARDING:
            count, weight = count + 1, weight + person_weight
        else:
            if count == 0:
                raise PassengerUnderflow(f"alighting at {self.id.address} with nobody aboard")
            count, weight = count - 1, max(0.0, weight - person_weight)
            if count == 0:
                weight = 0.0
        self.pending = Reading(self.id, now, Passenger(count, round(weight, 1)))
        if self._is_candidate(self.pending):
            self._enter_emergency(now)
        else:
            self.interval = self.thresholds.normal_interval
        return self._emit(Reason.EVENT)


class PassengerUnderflow(IwtsError):
    """Alighting requested while the counter is at zero."""
