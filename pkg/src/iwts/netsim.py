"""Deterministic discrete-event scheduler, link models and the event log.

Randomness comes from xorshift64* seeded through splitmix64, both defined
by their integer update equations so a run is reproducible from its seed
on any platform::

    splitmix64:  z = (s += 0x9E3779B97F4A7C15)
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 out = z ^ (z >> 31)
    xorshift64*: x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27
                 out = x * 0x2545F4914F6CDD1D
    uniform:     (out >> 11) * 2**-53

All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from iwts.model import InputError, IwtsError, SimTime

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xorshift64Star:
    def __init__(self, seed: int):
        _, x = splitmix64(seed & MASK64)
        self.state = x or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randrange(self, n: int) -> int:
        return int(self.random() * n)

    def choice(self, seq):
        return seq[self.randrange(len(seq))]


def derive_seed(seed: int, stream: str) -> int:
    """Independent sub-stream seed, e.g. one for generation and one for links."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# -- events and queue ---------------------------------------------------------


@dataclass(frozen=True)
class Event:
    kind: str
    payload: dict = field(default_factory=dict)


class EventQueue:
    """Pending events ordered by (time, sequence); sequence breaks ties FIFO."""

    def __init__(self, seed: int = 0, now: SimTime = 0):
        self.rng_seed = seed
        self.rng = Xorshift64Star(derive_seed(seed, "links"))
        self.now = now
        self._heap: list[tuple[SimTime, int, Event]] = []
        self._seq = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, delay: int, event: Event) -> int:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        return self.schedule_at(self.now + delay, event)

    def schedule_at(self, time: SimTime, event: Event) -> int:
        if time < self.now:
            raise ValueError(f"cannot schedule at {time}, now is {self.now}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (time, seq, event))
        return seq

    def peek_time(self) -> SimTime | None:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> tuple[SimTime, int, Event]:
        time, seq, event = heapq.heappop(self._heap)
        self.now = time
        return time, seq, event


# -- links --------------------------------------------------------------------


@dataclass(frozen=True)
class LinkModel:
    base_latency: int
    jitter: int = 0
    loss_prob: float = 0.0
    outages: tuple[tuple[SimTime, SimTime], ...] = ()

    def __post_init__(self):
        if self.base_latency < 0 or self.jitter < 0:
            raise InputError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise InputError(f"loss_prob out of range: {self.loss_prob}")
        prev_end = None
        for start, end in self.outages:
            if end <= start:
                raise InputError(f"empty outage window ({start}, {end})")
            if prev_end is not None and start < prev_end:
                raise InputError("outage windows must be sorted and non-overlapping")
            prev_end = end

    def in_outage(self, t: SimTime) -> bool:
        return any(start <= t < end for start, end in self.outages)

    def outage_end(self, t: SimTime) -> SimTime | None:
        for start, end in self.outages:
            if start <= t < end:
                return end
        return None


@dataclass(frozen=True)
class UplinkState:
    three_g: LinkModel
    fallback: LinkModel

    def __post_init__(self):
        if self.fallback.base_latency < self.three_g.base_latency:
            raise InputError("fallback link must not be faster than 3G")


DELIVERED = "delivered"
DROPPED = "dropped"
UNAVAILABLE = "unavailable"


@dataclass(frozen=True)
class Transmission:
    status: str
    deliver_at: SimTime | None = None
    seq: int | None = None

    @property
    def delivered(self) -> bool:
        return self.status == DELIVERED


def transmit(queue: EventQueue, link: LinkModel, event: Event,
             now: SimTime | None = None, not_before: SimTime | None = None) -> Transmission:
    """Put ``event`` on ``link``; on success it is scheduled for delivery.

    ``not_before`` keeps an ordered channel in order: delivery is pushed back
    to at least that instant.
    """
    now = queue.now if now is None else now
    if link.in_outage(now):
        return Transmission(UNAVAILABLE)
    # both draws always happen so the stream advances the same way per call
    lost = queue.rng.random() < link.loss_prob
    offset = round(link.jitter * (2.0 * queue.rng.random() - 1.0))
    if lost:
        return Transmission(DROPPED)
    at = now + max(0, link.base_latency + offset)
    if not_before is not None:
        at = max(at, not_before)
    seq = queue.schedule_at(at, event)
    return Transmission(DELIVERED, at, seq)


# -- log and loop ---------------------------------------------------------------


@dataclass(frozen=True)
class LogRecord:
    time: SimTime
    seq: int
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {"time": self.time, "seq": self.seq, "kind": self.kind, "payload": self.payload},
            sort_keys=True, separators=(",", ":"),
        )


class EventLog:
    """Append-only record of everything that happened in a run."""

    def __init__(self, records: Iterable[LogRecord] = ()):
        self.records: list[LogRecord] = list(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, time: SimTime, kind: str, payload: dict) -> LogRecord:
        rec = LogRecord(time, len(self.records), kind, payload)
        self.records.append(rec)
        return rec

    def of_kind(self, *kinds: str) -> list[LogRecord]:
        return [r for r in self.records if r.kind in kinds]

    def dumps(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def write(self, path: Path) -> None:
        Path(path).write_text(self.dumps())


Handler = Callable[[Event, SimTime], None]


def run_until(queue: EventQueue, handlers: dict[str, Handler], t_end: SimTime,
              log_: EventLog | None = None) -> EventLog:
    """Dispatch every event with time <= t_end in (time, sequence) order.

    Each dispatched event is logged before its handler runs. A handler that
    raises an IwtsError gets an ``error`` record and the run continues.
    """
    if t_end < queue.now:
        raise ValueError(f"t_end {t_end} is before now {queue.now}")
    out = EventLog() if log_ is None else log_
    while queue.peek_time() is not None and queue.peek_time() <= t_end:
        time, _, event = queue.pop()
        out.append(time, event.kind, event.payload)
        handler = handlers.get(event.kind)
        if handler is None:
            continue
        try:
            handler(event, time)
        except IwtsError as exc:
            log.debug("handler for %s failed: %s", event.kind, exc)
            out.append(time, "error", {"event": event.kind, "type": type(exc).__name__,
                                       "message": str(exc)})
    queue.now = t_end
    return out
