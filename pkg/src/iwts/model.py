"""Shared domain types, threshold rules, time helpers and geodesic distance."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Union

# Simulated time is integer milliseconds since the Unix epoch (UTC).
SimTime = int

EARTH_RADIUS_M = 6_371_000.0


class IwtsError(Exception):
    """Base class for domain errors raised inside the simulation."""


class InputError(IwtsError):
    """A value handed to an operation violates its precondition."""


class NoDataYet(IwtsError):
    """A monitor was asked for data before it sensed anything."""


class ConfigError(IwtsError):
    """Scenario-level misconfiguration detected at load time."""


class ProtocolError(IwtsError):
    """A message arrived at a node it does not belong to."""


def to_iso(t: SimTime) -> str:
    dt = datetime.fromtimestamp(t / 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t % 1000:03d}Z"


def parse_iso(text: str) -> SimTime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    # timestamp() goes through float; round to the millisecond
    return round(dt.timestamp() * 1000)


class MonitorKind(str, Enum):
    GPS = "gps"
    PASSENGER = "passenger"
    AIR = "air"
    WAVE = "wave"
    FREEBOARD = "freeboard"

    @property
    def wire_key(self) -> str:
        # the payload calls the freeboard block "floating-point"
        return "floating-point" if self is MonitorKind.FREEBOARD else self.value

    @classmethod
    def from_wire_key(cls, key: str) -> "MonitorKind":
        if key == "floating-point":
            return cls.FREEBOARD
        return cls(key)


class Weather(str, Enum):
    CLEAR = "clear"
    FOGGY = "foggy"
    RAINY = "rainy"
    STORMY = "stormy"


@dataclass(frozen=True)
class MonitorId:
    vessel_id: str
    kind: MonitorKind
    address: str


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    long: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise InputError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.long <= 180.0:
            raise InputError(f"longitude out of range: {self.long}")


@dataclass(frozen=True)
class Gps:
    lat: float
    long: float
    speed: float
    fix_time: SimTime

    def __post_init__(self):
        GeoPoint(self.lat, self.long)


@dataclass(frozen=True)
class Passenger:
    count: int
    weight: float

    def __post_init__(self):
        if self.count < 0:
            raise InputError(f"negative passenger count: {self.count}")
        if self.weight < 0:
            raise InputError(f"negative passenger weight: {self.weight}")


@dataclass(frozen=True)
class Air:
    weather: Weather
    direction: str
    speed: float


@dataclass(frozen=True)
class Wave:
    height: float
    direction: str
    speed: float

    def __post_init__(self):
        if self.height < 0:
            raise InputError(f"negative wave height: {self.height}")


@dataclass(frozen=True)
class Freeboard:
    ref_value: float
    actual_value: float

    def __post_init__(self):
        if self.ref_value <= 0:
            raise InputError(f"freeboard reference must be positive: {self.ref_value}")


Body = Union[Gps, Passenger, Air, Wave, Freeboard]

BODY_KIND: dict[type, MonitorKind] = {
    Gps: MonitorKind.GPS,
    Passenger: MonitorKind.PASSENGER,
    Air: MonitorKind.AIR,
    Wave: MonitorKind.WAVE,
    Freeboard: MonitorKind.FREEBOARD,
}


@dataclass(frozen=True)
class Reading:
    source: MonitorId
    at: SimTime
    body: Body

    def __post_init__(self):
        if BODY_KIND[type(self.body)] is not self.source.kind:
            raise InputError(
                f"{type(self.body).__name__} reading from a {self.source.kind.value} monitor"
            )

    @property
    def kind(self) -> MonitorKind:
        return self.source.kind


def _q(x: float, step: float) -> int:
    return math.floor(x / step + 0.5)


def quantize(body: Body) -> tuple:
    """Key used to decide whether two readings are "the same message".

    Steps: weight 1 kg, freeboard 1 cm, speed 1 km/h, wave height 1 cm,
    position 1e-4 degrees. Timestamps never take part.
    """
    if isinstance(body, Gps):
        return ("gps", _q(body.lat, 1e-4), _q(body.long, 1e-4), _q(body.speed, 1.0))
    if isinstance(body, Passenger):
        return ("passenger", body.count, _q(body.weight, 1.0))
    if isinstance(body, Air):
        return ("air", body.weather.value, body.direction, _q(body.speed, 1.0))
    if isinstance(body, Wave):
        return ("wave", _q(body.height, 1.0), body.direction, _q(body.speed, 1.0))
    return ("freeboard", _q(body.ref_value, 1.0), _q(body.actual_value, 1.0))


@dataclass(frozen=True)
class Thresholds:
    max_weight: float = 14000.0
    min_freeboard: float = 150.0
    normal_interval: int = 300
    emergency_interval: int = 60

    def __post_init__(self):
        if self.max_weight <= 0 or self.min_freeboard <= 0:
            raise InputError("threshold limits must be positive")
        if not 0 < self.emergency_interval < self.normal_interval:
            raise InputError("emergency_interval must be positive and below normal_interval")


@dataclass(frozen=True)
class RescueStation:
    station_id: str
    location: GeoPoint
    channel: str


class ViolationKind(str, Enum):
    OVERWEIGHT = "Overweight"
    LOW_FREEBOARD = "LowFreeboard"


@dataclass(frozen=True, order=True)
class Violation:
    kind: ViolationKind
    observed: float
    limit: float


@dataclass(frozen=True)
class VesselSnapshot:
    """Aggregate of the latest reading per monitor, as sent uplink."""

    vessel_id: str
    assembled_at: SimTime
    gps: Reading | None = None
    passenger: Reading | None = None
    air: Reading | None = None
    wave: Reading | None = None
    freeboard: Reading | None = None
    stale_monitors: tuple[MonitorId, ...] = field(default_factory=tuple)

    def blocks(self) -> list[Reading]:
        return [r for r in (self.gps, self.passenger, self.air, self.wave, self.freeboard) if r]

    @property
    def key(self) -> tuple[str, SimTime]:
        return (self.vessel_id, self.assembled_at)


def violation_set(snapshot: VesselSnapshot, thresholds: Thresholds) -> frozenset[Violation]:
    """Threshold violations present in a snapshot. Equality with a limit is safe."""
    found = set()
    if snapshot.passenger is not None:
        w = snapshot.passenger.body.weight
        if w > thresholds.max_weight:
            found.add(Violation(ViolationKind.OVERWEIGHT, w, thresholds.max_weight))
    if snapshot.freeboard is not None:
        fb = snapshot.freeboard.body.actual_value
        if fb < thresholds.min_freeboard:
            found.add(Violation(ViolationKind.LOW_FREEBOARD, fb, thresholds.min_freeboard))
    return frozenset(found)


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.long - a.long)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


# -- wire format ---------------------------------------------------------------

PAYLOAD_BLOCK_KEYS = ("gps", "passenger", "air", "wave", "floating-point")


def body_to_wire(reading: Reading) -> dict:
    b = reading.body
    ip = reading.source.address
    if isinstance(b, Gps):
        return {"ip": ip, "lat": f"{b.lat:.6f}", "long": f"{b.long:.6f}",
                "speed": b.speed, "time": to_iso(b.fix_time)}
    if isinstance(b, Passenger):
        return {"ip": ip, "count": b.count, "weight": b.weight}
    if isinstance(b, Air):
        return {"ip": ip, "weather": b.weather.value, "direction": b.direction, "speed": b.speed}
    if isinstance(b, Wave):
        return {"ip": ip, "height": b.height, "direction": b.direction, "speed": b.speed}
    return {"ip": ip, "ref-value": b.ref_value, "actual-value": b.actual_value}


def body_from_wire(kind: MonitorKind, block: dict) -> Body:
    if kind is MonitorKind.GPS:
        return Gps(float(block["lat"]), float(block["long"]), float(block["speed"]),
                   parse_iso(block["time"]))
    if kind is MonitorKind.PASSENGER:
        return Passenger(int(block["count"]), float(block["weight"]))
    if kind is MonitorKind.AIR:
        return Air(Weather(block["weather"]), str(block["direction"]), float(block["speed"]))
    if kind is MonitorKind.WAVE:
        return Wave(float(block["height"]), str(block["direction"]), float(block["speed"]))
    return Freeboard(float(block["ref-value"]), float(block["actual-value"]))


def snapshot_to_payload(snapshot: VesselSnapshot) -> dict:
    payload: dict = {}
    for reading in snapshot.blocks():
        payload[reading.kind.wire_key] = body_to_wire(reading)
    payload["vessel-id"] = snapshot.vessel_id
    payload["assembled-at"] = to_iso(snapshot.assembled_at)
    payload["stale"] = [m.kind.wire_key for m in snapshot.stale_monitors]
    return payload


def snapshot_from_payload(payload: dict) -> VesselSnapshot:
    """Inverse of snapshot_to_payload.

    Block readings take the snapshot's assembly time as their timestamp,
    since payload blocks carry no per-block time. Raises InputError on
    anything malformed.
    """
    try:
        vessel_id = payload["vessel-id"]
        if not isinstance(vessel_id, str) or not vessel_id:
            raise InputError("vessel-id must be a non-empty string")
        at = parse_iso(payload["assembled-at"])
        unknown = set(payload) - set(PAYLOAD_BLOCK_KEYS) - {"vessel-id", "assembled-at", "stale"}
        if unknown:
            raise InputError(f"unknown payload keys: {sorted(unknown)}")
        readings: dict[str, Reading] = {}
        ids: dict[str, MonitorId] = {}
        for key in PAYLOAD_BLOCK_KEYS:
            if key not in payload:
                continue
            kind = MonitorKind.from_wire_key(key)
            block = payload[key]
            mid = MonitorId(vessel_id, kind, str(block["ip"]))
            ids[key] = mid
            readings[kind.value] = Reading(mid, at, body_from_wire(kind, block))
        stale = []
        for key in payload.get("stale", []):
            if key not in ids:
                raise InputError(f"stale monitor {key!r} has no block")
            stale.append(ids[key])
    except InputError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise InputError(f"malformed snapshot payload: {exc!r}") from exc
    return VesselSnapshot(vessel_id, at, stale_monitors=tuple(stale), **readings)


def reading_to_json(reading: Reading) -> dict:
    return {"vessel": reading.source.vessel_id, "kind": reading.kind.value,
            "ip": reading.source.address, "at": reading.at, "body": body_to_wire(reading)}


def reading_from_json(data: dict) -> Reading:
    kind = MonitorKind(data["kind"])
    mid = MonitorId(data["vessel"], kind, data["ip"])
    return Reading(mid, data["at"], body_from_wire(kind, data["body"]))
