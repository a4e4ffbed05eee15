"""Scenario configuration, synthetic week generation and scripted interventions."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time, timedelta, timezone
from enum import Enum
from importlib import resources
from pathlib import Path

import jsonschema

from iwts.model import (
    Air,
    ConfigError,
    Freeboard,
    GeoPoint,
    Gps,
    InputError,
    MonitorId,
    MonitorKind,
    Reading,
    RescueStation,
    SimTime,
    Thresholds,
    Wave,
    Weather,
    parse_iso,
)
from iwts.monitor import PassengerEventKind
from iwts.netsim import LinkModel, Xorshift64Star, derive_seed

log = logging.getLogger(__name__)

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
DIRECTIONS = ("north-south", "south-north", "east-west", "west-east")
ADDRESS_SUFFIX = {
    MonitorKind.GPS: 1,
    MonitorKind.PASSENGER: 2,
    MonitorKind.AIR: 3,
    MonitorKind.WAVE: 4,
    MonitorKind.FREEBOARD: 5,
}
PERSON_WEIGHT_KG = (55.0, 85.0)


class ScenarioError(ConfigError):
    """The scenario file is invalid or its curves cannot produce the flagged anomaly."""


def _clock(text: str) -> int:
    """'HH:MM[:SS]' to seconds after midnight."""
    t = time.fromisoformat(text)
    return t.hour * 3600 + t.minute * 60 + t.second


def _fmt_clock(seconds: int) -> str:
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class Anomaly:
    day: int  # index into the scenario days
    cross_at: int  # seconds after midnight
    peak_at: int


class TriggerKind(str, Enum):
    ON_ALERT_LEVEL = "OnAlertLevel"
    AT_TIME = "AtTime"


class ActionKind(str, Enum):
    UNLOAD_PASSENGERS = "UnloadPassengers"
    HOLD_DEPARTURE = "HoldDeparture"


@dataclass(frozen=True)
class ScriptedIntervention:
    vessel_id: str
    trigger: TriggerKind
    action: ActionKind
    level: str | None = None
    at: SimTime | None = None
    count: int = 0
    response_delay_s: int = 0

    def __post_init__(self):
        if self.action is ActionKind.UNLOAD_PASSENGERS and self.count <= 0:
            raise ScenarioError("UnloadPassengers needs a positive count")
        if self.trigger is TriggerKind.ON_ALERT_LEVEL and self.level is None:
            raise ScenarioError("OnAlertLevel trigger needs a level")
        if self.trigger is TriggerKind.AT_TIME and self.at is None:
            raise ScenarioError("AtTime trigger needs a time")


@dataclass(frozen=True)
class VesselConfig:
    vessel_id: str
    address_prefix: str
    thresholds: Thresholds
    origin: GeoPoint
    destination: GeoPoint
    boarding_start: int  # seconds after midnight
    boarding_end: int
    freeboard_ref: float = 170.0
    draft_range: float | None = None
    # one piecewise-linear load curve per scenario day: ((seconds, kg), ...)
    day_profiles: tuple[tuple[tuple[int, float], ...], ...] = ()
    anomaly: Anomaly | None = None

    def monitor_ids(self) -> dict[MonitorKind, MonitorId]:
        return {k: MonitorId(self.vessel_id, k, f"{self.address_prefix}{n}")
                for k, n in ADDRESS_SUFFIX.items()}


@dataclass(frozen=True)
class LinkConfig:
    pan: LinkModel = LinkModel(10, 5, 0.0)
    three_g: LinkModel = LinkModel(250, 100, 0.01)
    fallback: LinkModel = LinkModel(900, 300, 0.02)
    alert: LinkModel = LinkModel(1000, 500, 0.0)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    start_date: date
    days: int
    vessels: tuple[VesselConfig, ...]
    rescue_registry: tuple[RescueStation, ...]
    links: LinkConfig = LinkConfig()
    interventions: tuple[ScriptedIntervention, ...] = ()
    sense_period_s: int = 10
    timer_period_s: int = 60
    retry_backoff_s: int = 5
    debounce_s: int = 60
    control_room: str = "control-room"
    station_terminal: str = "station-terminal"

    def day_start(self, day: int) -> SimTime:
        d = datetime.combine(self.start_date + timedelta(days=day), time(0), tzinfo=timezone.utc)
        return int(d.timestamp()) * 1000

    def day_of(self, t: SimTime) -> int:
        return (t - self.day_start(0)) // 86_400_000

    def vessel(self, vessel_id: str) -> VesselConfig:
        for v in self.vessels:
            if v.vessel_id == vessel_id:
                return v
        raise KeyError(vessel_id)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def _load_schema() -> dict:
    return json.loads(resources.files("iwts.schemas").joinpath("scenario.schema.json").read_text())


def _link(data: dict | None, default: LinkModel) -> LinkModel:
    if data is None:
        return default
    outages = tuple((parse_iso(a), parse_iso(b)) for a, b in data.get("outages", []))
    return LinkModel(
        base_latency=data.get("base_latency_ms", default.base_latency),
        jitter=data.get("jitter_ms", default.jitter),
        loss_prob=data.get("loss_prob", default.loss_prob),
        outages=outages,
    )


def _point(d: dict) -> GeoPoint:
    return GeoPoint(float(d["lat"]), float(d["long"]))


def _profile(knots: list) -> tuple[tuple[int, float], ...]:
    out = tuple((_clock(t), float(kg)) for t, kg in knots)
    if any(b[0] <= a[0] for a, b in zip(out, out[1:])):
        raise ScenarioError("load curve knots must have strictly increasing times")
    return out


def parse_scenario(data: dict) -> ScenarioConfig:
    try:
        jsonschema.validate(data, _load_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{path}: {exc.message}") from None
    try:
        return _build(data)
    except ScenarioError:
        raise
    except (InputError, ValueError, KeyError) as exc:
        raise ScenarioError(str(exc)) from exc


def _build(data: dict) -> ScenarioConfig:
    start = date.fromisoformat(data["start_date"])
    ndays = data.get("days", 7)
    day_names = [WEEKDAYS[(start + timedelta(days=i)).weekday()] for i in range(ndays)]

    vessels = []
    for v in data["vessels"]:
        window = v["boarding_window"]
        b_start, b_end = _clock(window["start"]), _clock(window["end"])
        if b_start >= b_end:
            raise ScenarioError(f"{v['vessel_id']}: boarding window start must precede end")
        profiles = v.get("day_profiles", {})
        per_day = []
        for name in day_names:
            knots = profiles.get(name, profiles.get("default"))
            per_day.append(_profile(knots) if knots else ())
        anomaly = None
        if "anomaly" in v:
            a = v["anomaly"]
            if a["day"] not in day_names:
                raise ScenarioError(f"anomaly day {a['day']} is not part of the scenario")
            anomaly = Anomaly(day_names.index(a["day"]), _clock(a["cross_at"]), _clock(a["peak_at"]))
        fb = v.get("freeboard", {})
        vessels.append(VesselConfig(
            vessel_id=v["vessel_id"],
            address_prefix=v["address_prefix"],
            thresholds=Thresholds(**v.get("thresholds", {})),
            origin=_point(v["route"]["from"]),
            destination=_point(v["route"]["to"]),
            boarding_start=b_start,
            boarding_end=b_end,
            freeboard_ref=float(fb.get("ref_value", 170.0)),
            draft_range=fb.get("draft_range"),
            day_profiles=tuple(per_day),
            anomaly=anomaly,
        ))
    if sum(v.anomaly is not None for v in vessels) > 1:
        raise ScenarioError("at most one anomaly day may be flagged")
    ids = [v.vessel_id for v in vessels]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate vessel ids")
    addresses = [m.address for v in vessels for m in v.monitor_ids().values()]
    if len(set(addresses)) != len(addresses):
        raise ScenarioError("monitor addresses must be unique fleet-wide")

    registry = tuple(RescueStation(s["station_id"], _point(s["location"]), s["channel"])
                     for s in data["rescue_registry"])
    if len({s.station_id for s in registry}) != len(registry):
        raise ScenarioError("duplicate rescue station ids")

    links = data.get("links", {})
    default = LinkConfig()
    link_cfg = LinkConfig(
        pan=_link(links.get("pan"), default.pan),
        three_g=_link(links.get("three_g"), default.three_g),
        fallback=_link(links.get("fallback"), default.fallback),
        alert=_link(links.get("alert"), default.alert),
    )
    if link_cfg.fallback.base_latency < link_cfg.three_g.base_latency:
        raise ScenarioError("fallback link must not be faster than 3G")

    interventions = []
    for item in data.get("interventions", []):
        trig, act = item["trigger"], item["action"]
        vessel_id = item.get("vessel", ids[0])
        if vessel_id not in ids:
            raise ScenarioError(f"intervention names unknown vessel {vessel_id}")
        interventions.append(ScriptedIntervention(
            vessel_id=vessel_id,
            trigger=TriggerKind.ON_ALERT_LEVEL if "on_alert_level" in trig else TriggerKind.AT_TIME,
            level=trig.get("on_alert_level"),
            at=parse_iso(trig["at_time"]) if "at_time" in trig else None,
            action=ActionKind.UNLOAD_PASSENGERS if "unload_passengers" in act else ActionKind.HOLD_DEPARTURE,
            count=act.get("unload_passengers", 0),
            response_delay_s=item.get("response_delay_s", 0),
        ))

    collector = data.get("collector", {})
    cloud = data.get("cloud", {})
    return ScenarioConfig(
        name=data["name"],
        seed=data["seed"],
        start_date=start,
        days=ndays,
        vessels=tuple(vessels),
        rescue_registry=registry,
        links=link_cfg,
        interventions=tuple(interventions),
        sense_period_s=data.get("sense_period_s", 10),
        timer_period_s=collector.get("timer_period_s", 60),
        retry_backoff_s=collector.get("retry_backoff_s", 5),
        debounce_s=cloud.get("debounce_s", 60),
        control_room=cloud.get("control_room", "control-room"),
        station_terminal=cloud.get("station_terminal", "station-terminal"),
    )


BUNDLED = ("paper-week.json",)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read a scenario file; a bare bundled name such as ``paper-week.json`` also works."""
    p = Path(path)
    if p.exists():
        text = p.read_text()
    elif p.name in BUNDLED and str(path) == p.name:
        text = resources.files("iwts.data").joinpath(p.name).read_text()
    else:
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
    return parse_scenario(data)


# -- generation ---------------------------------------------------------------


@dataclass(frozen=True)
class SenseEvent:
    at: SimTime
    reading: Reading


@dataclass(frozen=True)
class PassengerEvent:
    at: SimTime
    monitor: MonitorId
    kind: PassengerEventKind
    person_weight: float


@dataclass(frozen=True)
class FreeboardModel:
    """Linear displacement proxy: freeboard = ref - (weight / max_weight) * draft_range."""

    ref_value: float
    draft_range: float
    max_weight: float

    def freeboard(self, weight: float) -> float:
        return round(self.ref_value - (weight / self.max_weight) * self.draft_range, 2)


@dataclass
class Week:
    events: list = field(default_factory=list)
    freeboard_models: dict[str, FreeboardModel] = field(default_factory=dict)
    # per vessel, per day: [(time, weight after that slot's boardings)]
    weight_series: dict[str, list[list[tuple[SimTime, float]]]] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)


def _target(knots: tuple[tuple[int, float], ...], t: int) -> float:
    if not knots or t < knots[0][0]:
        return 0.0
    for (t0, w0), (t1, w1) in zip(knots, knots[1:]):
        if t0 <= t <= t1:
            return w0 + (w1 - w0) * (t - t0) / (t1 - t0)
    return knots[-1][1]


def _boardings(vessel: VesselConfig, knots, day_start: SimTime, period: int,
               rng: Xorshift64Star) -> tuple[list[tuple[SimTime, float]], list[tuple[SimTime, float]]]:
    """Greedy tracking of the load curve; returns (boardings, per-slot weight)."""
    board, series = [], []
    total = 0.0
    next_w = round(rng.uniform(*PERSON_WEIGHT_KG), 1)
    for sec in range(vessel.boarding_start, vessel.boarding_end, period):
        at = day_start + sec * 1000
        target = _target(knots, sec)
        while total + next_w <= target + 1e-9:
            total = round(total + next_w, 1)
            board.append((at, next_w))
            next_w = round(rng.uniform(*PERSON_WEIGHT_KG), 1)
        series.append((at, total))
    return board, series


def _resolve_freeboard(vessel: VesselConfig, series, day_start) -> FreeboardModel:
    th = vessel.thresholds
    margin = vessel.freeboard_ref - th.min_freeboard
    if margin <= 0:
        raise ScenarioError(f"{vessel.vessel_id}: reference freeboard must exceed the minimum")
    if vessel.draft_range is not None:
        return FreeboardModel(vessel.freeboard_ref, float(vessel.draft_range), th.max_weight)
    if vessel.anomaly is None:
        # freeboard reaches the floor exactly at the weight limit
        return FreeboardModel(vessel.freeboard_ref, margin, th.max_weight)
    a = vessel.anomaly
    peak_t = day_start(a.day) + a.peak_at * 1000
    before = [w for t, w in series[a.day] if t < peak_t]
    at_peak = [w for t, w in series[a.day] if t == peak_t]
    if not at_peak or not before or at_peak[0] <= max(before):
        raise ScenarioError(f"{vessel.vessel_id}: load curve does not peak at {_fmt_clock(a.peak_at)}")
    crossing_weight = (max(before) + at_peak[0]) / 2
    return FreeboardModel(vessel.freeboard_ref, margin * th.max_weight / crossing_weight, th.max_weight)


def _check_anomaly(vessel: VesselConfig, series, model: FreeboardModel, day_start) -> None:
    th = vessel.thresholds
    for day, rows in enumerate(series):
        flagged = vessel.anomaly is not None and vessel.anomaly.day == day
        if not flagged:
            bad = [t for t, w in rows if w > th.max_weight or model.freeboard(w) < th.min_freeboard]
            if bad:
                raise ScenarioError(f"{vessel.vessel_id}: day {day} violates a threshold but is not flagged")
            continue
        a = vessel.anomaly
        over = [t for t, w in rows if w > th.max_weight]
        cross = day_start(day) + a.cross_at * 1000
        if not over or over[0] != cross:
            raise ScenarioError(f"{vessel.vessel_id}: weight does not first exceed the limit at "
                                f"{_fmt_clock(a.cross_at)}")
        low = [t for t, w in rows if model.freeboard(w) < th.min_freeboard]
        peak = day_start(day) + a.peak_at * 1000
        if not low or low[0] != peak:
            raise ScenarioError(f"{vessel.vessel_id}: freeboard does not first drop below the "
                                f"minimum at {_fmt_clock(a.peak_at)}")
        week_max = max(w for r in series for _, w in r)
        first_max = next(t for t, w in rows if w == week_max)
        if first_max != peak:
            raise ScenarioError(f"{vessel.vessel_id}: weekly weight peak is not at {_fmt_clock(a.peak_at)}")


def generate_week(config: ScenarioConfig) -> Week:
    """Timed sense and boarding events for every vessel and day, sorted by time.

    Within one instant the order is boardings, then gps, air, wave and
    freeboard readings, so freeboard always reflects the slot's boardings.
    """
    rng = Xorshift64Star(derive_seed(config.seed, "scenario"))
    period = config.sense_period_s
    week = Week()
    keyed = []
    order = 0
    for vessel in config.vessels:
        ids = vessel.monitor_ids()
        all_series, all_boardings = [], []
        for day in range(config.days):
            knots = vessel.day_profiles[day] if day < len(vessel.day_profiles) else ()
            board, series = _boardings(vessel, knots, config.day_start(day), period, rng)
            all_series.append(series)
            all_boardings.append(board)
        model = _resolve_freeboard(vessel, all_series, config.day_start)
        _check_anomaly(vessel, all_series, model, config.day_start)
        week.freeboard_models[vessel.vessel_id] = model
        week.weight_series[vessel.vessel_id] = all_series

        for day in range(config.days):
            weather = rng.choice((Weather.CLEAR, Weather.CLEAR, Weather.FOGGY, Weather.RAINY))
            air_dir, wave_dir = rng.choice(DIRECTIONS), rng.choice(DIRECTIONS)
            air_speed = round(rng.uniform(5.0, 25.0), 1)
            wave_base = rng.uniform(20.0, 60.0)
            wave_speed = round(rng.uniform(5.0, 15.0), 1)
            boarding_at = {}
            for at, w in all_boardings[day]:
                boarding_at.setdefault(at, []).append(w)
            for at, weight in all_series[day]:
                for w in boarding_at.get(at, ()):
                    keyed.append((at, order, PassengerEvent(at, ids[MonitorKind.PASSENGER],
                                                            PassengerEventKind.BOARDING, w)))
                    order += 1
                readings = [
                    Gps(vessel.origin.lat, vessel.origin.long, 0.0, at),
                    Air(weather, air_dir, round(air_speed + rng.uniform(-0.4, 0.4), 1)),
                    Wave(round(max(0.0, wave_base + rng.uniform(-2.0, 2.0)), 1), wave_dir, wave_speed),
                    Freeboard(vessel.freeboard_ref, model.freeboard(weight)),
                ]
                for kind, body in zip((MonitorKind.GPS, MonitorKind.AIR, MonitorKind.WAVE,
                                       MonitorKind.FREEBOARD), readings):
                    keyed.append((at, order, SenseEvent(at, Reading(ids[kind], at, body))))
                    order += 1
    keyed.sort(key=lambda x: (x[0], x[1]))
    week.events = [e for _, _, e in keyed]
    return week


# -- interventions --------------------------------------------------------------


def apply_intervention(intervention: ScriptedIntervention, monitor: MonitorId, count: int,
                       weight: float, thresholds: Thresholds, now: SimTime,
                       spread_ms: int = 60_000) -> list[PassengerEvent]:
    """Alighting events that carry out an intervention, given the live load.

    Each alighting person is credited the current mean weight aboard. The
    requested count is clipped to the people aboard, and raised when it
    would not bring the load back within the limit.
    """
    if intervention.action is not ActionKind.UNLOAD_PASSENGERS:
        return []
    n = intervention.count
    if n > count:
        log.warning("unload of %d requested with %d aboard; clipping", n, count)
        n = count
    if n == 0:
        return []
    mean = weight / count
    needed = math.ceil(max(0.0, weight - thresholds.max_weight) / mean - 1e-9)
    if n < needed:
        log.warning("unload of %d leaves %s over its limit; unloading %d", n, monitor.vessel_id, needed)
        n = min(needed, count)
    events = []
    for i in range(n):
        share = round(mean * (i + 1), 1) - round(mean * i, 1)
        at = now + (i + 1) * spread_ms // n
        events.append(PassengerEvent(at, monitor, PassengerEventKind.ALIGHTING, round(share, 1)))
    return events
