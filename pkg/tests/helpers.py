"""Scenario builders shared by the tests."""

from __future__ import annotations

import random
from datetime import date

from iwts.model import (
    Air,
    Freeboard,
    GeoPoint,
    Gps,
    MonitorKind,
    Reading,
    RescueStation,
    Thresholds,
    Wave,
    Weather,
)
from iwts.monitor import PassengerEventKind
from iwts.netsim import LinkModel
from iwts.scenario import (
    FreeboardModel,
    LinkConfig,
    PassengerEvent,
    ScenarioConfig,
    SenseEvent,
    VesselConfig,
    Week,
)

DHAKA = GeoPoint(23.8103, 90.4125)
BARISAL = GeoPoint(22.7010, 90.3535)

REGISTRY = (
    RescueStation("barisal", BARISAL, "rescue/barisal"),
    RescueStation("dhaka", DHAKA, "rescue/dhaka"),
)


def vessel(vessel_id="V1", prefix="10.0.0.", thresholds=Thresholds(), start=36000, end=36600,
           profiles=(), anomaly=None) -> VesselConfig:
    return VesselConfig(vessel_id, prefix, thresholds, BARISAL, DHAKA, start, end,
                        day_profiles=profiles, anomaly=anomaly)


def config(vessels=None, days=1, links=LinkConfig(), seed=1, interventions=()) -> ScenarioConfig:
    return ScenarioConfig(
        name="test", seed=seed, start_date=date(2016, 1, 4), days=days,
        vessels=tuple(vessels or (vessel(),)), rescue_registry=REGISTRY, links=links,
        interventions=interventions,
    )


def random_trace(seed: int, session_s: int = 600, links: LinkConfig | None = None):
    """A one-session config plus a random monitor trace for it.

    Limits are scaled down so a few dozen boardings cross them; values
    random-walk with steps both above and below the quantization step.
    """
    rng = random.Random(seed)
    th = Thresholds(max_weight=rng.choice((400.0, 800.0, 1500.0)), min_freeboard=150.0)
    v = vessel(thresholds=th, start=36000, end=36000 + session_s)
    cfg = config([v], links=links or LinkConfig(), seed=seed)
    ids = v.monitor_ids()
    base = cfg.day_start(0) + v.boarding_start * 1000
    lat, lon, speed = BARISAL.lat, BARISAL.long, 0.0
    wind, height = 10.0, 30.0
    count = 0
    events = []
    for slot in range(0, session_s, 10):
        at = base + slot * 1000
        for _ in range(rng.choice((0, 0, 1, 2, 3))):
            if count and rng.random() < 0.3:
                count -= 1
                kind, w = PassengerEventKind.ALIGHTING, round(rng.uniform(55, 85), 1)
            else:
                count += 1
                kind, w = PassengerEventKind.BOARDING, round(rng.uniform(55, 85), 1)
            events.append(PassengerEvent(at, ids[MonitorKind.PASSENGER], kind, w))
        if rng.random() < 0.5:
            lat += rng.choice((0.0, 0.00002, 0.0003))
            speed = max(0.0, speed + rng.uniform(-1.5, 1.5))
        wind = max(0.0, wind + rng.choice((0.0, 0.2, -0.2, 2.0, -2.0)))
        height = max(0.0, height + rng.choice((0.0, 0.3, -0.3, 3.0, -3.0)))
        for body in (Gps(lat, lon, round(speed, 2), at),
                     Air(Weather.CLEAR, "west-east", round(wind, 1)),
                     Wave(round(height, 1), "south-north", 8.0),
                     Freeboard(170.0, 170.0)):
            kind = {Gps: MonitorKind.GPS, Air: MonitorKind.AIR, Wave: MonitorKind.WAVE,
                    Freeboard: MonitorKind.FREEBOARD}[type(body)]
            events.append(SenseEvent(at, Reading(ids[kind], at, body)))
    # alighting is only drawn while someone is aboard, so the trace is valid
    week = Week(events, {v.vessel_id: FreeboardModel(170.0, 30.0, th.max_weight)})
    return cfg, week


def outage_links(start, three_g_windows, fallback_windows, loss=0.01) -> LinkConfig:
    def win(ws):
        return tuple((start + a * 1000, start + b * 1000) for a, b in ws)
    return LinkConfig(
        three_g=LinkModel(250, 100, loss, win(three_g_windows)),
        fallback=LinkModel(900, 300, 2 * loss, win(fallback_windows)),
    )
