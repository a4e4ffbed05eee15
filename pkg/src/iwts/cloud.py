"""Cloud application and database service: rule evaluation, alerting, storage, queries."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from iwts.model import (
    ConfigError,
    GeoPoint,
    InputError,
    RescueStation,
    SimTime,
    Thresholds,
    VesselSnapshot,
    Violation,
    ViolationKind,
    haversine_m,
    snapshot_from_payload,
    snapshot_to_payload,
    violation_set,
)
from iwts.netsim import Event, EventLog, EventQueue, LinkModel, LogRecord, Transmission, transmit


class Verdict(str, Enum):
    NORMAL = "Normal"
    EMERGENCY = "Emergency"


class Level(str, Enum):
    LEVEL1 = "Level1"
    LEVEL2 = "Level2"


class RecipientKind(str, Enum):
    CONTROL_ROOM = "ControlRoom"
    RESCUE_STATION = "RescueStation"
    STATION_TERMINAL = "StationTerminal"
    VEHICLE = "Vehicle"


@dataclass(frozen=True)
class Recipient:
    kind: RecipientKind
    endpoint: str


@dataclass(frozen=True)
class SituationAssessment:
    vessel_id: str
    at: SimTime
    verdict: Verdict
    level: Level | None
    violations: frozenset[Violation]

    def to_json(self) -> dict:
        return {
            "vessel": self.vessel_id,
            "at": self.at,
            "verdict": self.verdict.value,
            "level": self.level.value if self.level else None,
            "violations": violations_to_json(self.violations),
        }


@dataclass(frozen=True)
class Alert:
    alert_id: int
    assessment: SituationAssessment
    location: GeoPoint | None
    recipients: tuple[Recipient, ...]
    issued_at: SimTime
    message_text: str
    assembled_at: SimTime

    def to_json(self) -> dict:
        return {
            "vessel": self.assessment.vessel_id,
            "alert_id": self.alert_id,
            "issued_at": self.issued_at,
            "assembled_at": self.assembled_at,
            "level": self.assessment.level.value,
            "violations": violations_to_json(self.assessment.violations),
            "location": None if self.location is None else
            {"lat": self.location.lat, "long": self.location.long},
            "recipients": [{"kind": r.kind.value, "endpoint": r.endpoint} for r in self.recipients],
            "message_text": self.message_text,
        }


def violations_to_json(violations: Iterable[Violation]) -> list[dict]:
    return [{"kind": v.kind.value, "observed": v.observed, "limit": v.limit}
            for v in sorted(violations)]


class EventStore(EventLog):
    """Append-only store; records share the event-log schema."""

    def query(self, vessel_id: str, start: SimTime, end: SimTime) -> list[LogRecord]:
        return query(self, vessel_id, start, end)


def query(store: Iterable[LogRecord], vessel_id: str, start: SimTime, end: SimTime) -> list[LogRecord]:
    if start > end:
        raise InputError(f"query range is reversed: {start} > {end}")
    return [r for r in store if r.payload.get("vessel") == vessel_id and start <= r.time <= end]


def evaluate(snapshot: VesselSnapshot, thresholds: Thresholds, now: SimTime) -> SituationAssessment:
    violations = violation_set(snapshot, thresholds)
    if not violations:
        return SituationAssessment(snapshot.vessel_id, now, Verdict.NORMAL, None, violations)
    level = Level.LEVEL2 if len(violations) >= 2 else Level.LEVEL1
    return SituationAssessment(snapshot.vessel_id, now, Verdict.EMERGENCY, level, violations)


def nearest_station(location: GeoPoint, registry: list[RescueStation]) -> RescueStation:
    if not registry:
        raise ConfigError("rescue station registry is empty")
    return min(registry, key=lambda s: (haversine_m(location, s.location), s.station_id))


_UNITS = {ViolationKind.OVERWEIGHT: ("kg", ">"), ViolationKind.LOW_FREEBOARD: ("cm", "<")}


def render_alert_text(assessment: SituationAssessment, location: GeoPoint | None) -> str:
    where = "location unknown" if location is None else f"{location.lat:.4f},{location.long:.4f}"
    parts = []
    for v in sorted(assessment.violations):
        unit, op = _UNITS[v.kind]
        parts.append(f"{v.kind.value} {v.observed:.1f} {unit} {op} {v.limit:g} {unit}")
    return (f"EMERGENCY {assessment.level.value}: vessel {assessment.vessel_id} "
            f"at ({where}) — {'; '.join(parts)}")


def send_alert(queue: EventQueue, link: LinkModel, alert_payload: dict, recipient: dict,
               backoff_ms: int, attempt: int = 1) -> Transmission:
    """Transmit one alert copy; schedule a retry if the channel refused or lost it."""
    body = {"alert": alert_payload, "recipient": recipient, "attempt": attempt}
    tx = transmit(queue, link, Event("alert-deliver", body))
    if not tx.delivered:
        queue.schedule(backoff_ms, Event("alert-retry", {**body, "outcome": tx.status}))
    return tx


def dispatch(alert: Alert, queue: EventQueue, link: LinkModel,
             backoff_ms: int = 5000) -> list[tuple[Recipient, Transmission]]:
    """One transmission per recipient over the alert channel."""
    payload = alert.to_json()
    return [
        (r, send_alert(queue, link, payload, {"kind": r.kind.value, "endpoint": r.endpoint}, backoff_ms))
        for r in alert.recipients
    ]


@dataclass
class _Episode:
    level: Level
    last_alert: dict[Level, SimTime] = field(default_factory=dict)


@dataclass(frozen=True)
class IngestResult:
    status: str  # stored | duplicate | rejected
    assessment: SituationAssessment | None = None
    alerts: tuple[Alert, ...] = ()


class CloudService:
    def __init__(self, vessels: dict[str, Thresholds], registry: list[RescueStation],
                 control_room: str = "control-room", station_terminal: str = "station-terminal",
                 debounce_ms: int = 60_000, store: EventStore | None = None):
        if not registry:
            raise ConfigError("rescue station registry is empty")
        ids = [s.station_id for s in registry]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate rescue station ids")
        self.vessels = dict(vessels)
        self.registry = list(registry)
        self.control_room = control_room
        self.station_terminal = station_terminal
        self.debounce_ms = debounce_ms
        self.store = store if store is not None else EventStore()
        self._seen: set[tuple[str, SimTime]] = set()
        self._episodes: dict[str, _Episode] = {}
        self._next_alert_id = 1

    def receive(self, payload: dict, now: SimTime) -> IngestResult:
        """Entry point for raw uplink payloads, with dedup on (vessel, assembled-at)."""
        try:
            snapshot = snapshot_from_payload(payload)
            if snapshot.vessel_id not in self.vessels:
                raise InputError(f"unknown vessel {snapshot.vessel_id!r}")
        except InputError as exc:
            self.store.append(now, "rejection", {
                "vessel": payload.get("vessel-id") if isinstance(payload, dict) else None,
                "reason": str(exc), "raw": payload,
            })
            return IngestResult("rejected")
        if snapshot.key in self._seen:
            return IngestResult("duplicate")
        self._seen.add(snapshot.key)
        assessment, alerts = self.ingest(snapshot, payload, now)
        return IngestResult("stored", assessment, tuple(alerts))

    def ingest(self, snapshot: VesselSnapshot, payload: dict | None,
               now: SimTime) -> tuple[SituationAssessment, list[Alert]]:
        thresholds = self.vessels[snapshot.vessel_id]
        wire = payload if payload is not None else snapshot_to_payload(snapshot)
        self.store.append(now, "snapshot", {"vessel": snapshot.vessel_id, "snapshot": wire})
        assessment = evaluate(snapshot, thresholds, now)
        self.store.append(now, "assessment",
                          {**assessment.to_json(), "assembled_at": snapshot.assembled_at})
        alerts = []
        if self._debounce_allows(assessment, snapshot.assembled_at):
            alert = self._make_alert(assessment, snapshot, now)
            self.store.append(now, "alert", alert.to_json())
            alerts.append(alert)
        return assessment, alerts

    def _debounce_allows(self, assessment: SituationAssessment, t: SimTime) -> bool:
        vid = assessment.vessel_id
        if assessment.verdict is Verdict.NORMAL:
            self._episodes.pop(vid, None)
            return False
        ep = self._episodes.get(vid)
        level = assessment.level
        if ep is None:
            ep = self._episodes[vid] = _Episode(level)
        elif ep.level is level:
            last = ep.last_alert.get(level)
            if last is not None and t - last < self.debounce_ms:
                return False
        ep.level = level
        ep.last_alert[level] = t
        return True

    def _make_alert(self, assessment: SituationAssessment, snapshot: VesselSnapshot,
                    now: SimTime) -> Alert:
        location = None
        recipients = [Recipient(RecipientKind.CONTROL_ROOM, self.control_room)]
        if snapshot.gps is not None:
            location = GeoPoint(snapshot.gps.body.lat, snapshot.gps.body.long)
            station = nearest_station(location, self.registry)
            recipients.append(Recipient(RecipientKind.RESCUE_STATION, station.channel))
        recipients.append(Recipient(RecipientKind.STATION_TERMINAL, self.station_terminal))
        recipients.append(Recipient(RecipientKind.VEHICLE, f"vessel/{snapshot.vessel_id}"))
        alert = Alert(
            alert_id=self._next_alert_id,
            assessment=assessment,
            location=location,
            recipients=tuple(recipients),
            issued_at=now,
            message_text=render_alert_text(assessment, location),
            assembled_at=snapshot.assembled_at,
        )
        self._next_alert_id += 1
        return alert
