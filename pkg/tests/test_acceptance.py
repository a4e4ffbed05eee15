"""End-to-end acceptance checks; one verdict line per criterion is printed in the summary."""

import random
import time
from dataclasses import replace

import pytest

from helpers import random_trace
from iwts.cloud import evaluate, nearest_station
from iwts.model import (
    Freeboard,
    GeoPoint,
    MonitorId,
    MonitorKind,
    Passenger,
    Reading,
    RescueStation,
    Thresholds,
    VesselSnapshot,
    haversine_m,
    parse_iso,
)
from iwts.netsim import LinkModel
from iwts.report import build_report, episode_latencies, series_rows
from iwts.scenario import LinkConfig
from iwts.simulation import Simulation
from oracles import (
    brute_nearest,
    conservation_problems,
    cosine_law_m,
    expected_assessment,
    replay_trace,
)

VESSEL = "MV-Barisal-Express"
WED = "2016-01-06T"


def wed(clock: str) -> int:
    return parse_iso(f"{WED}{clock}Z")


@pytest.fixture(scope="module")
def timed_run(bundled_config):
    started = time.perf_counter()
    sim = Simulation(bundled_config)
    log = sim.run()
    return sim, log, time.perf_counter() - started


@pytest.fixture(scope="module")
def rows(timed_run):
    sim, _, _ = timed_run
    return series_rows(sim.store, VESSEL)


@pytest.mark.criterion(1, "weekly timeline reproduced")
class TestTimeline:
    def test_runtime(self, timed_run):
        assert timed_run[2] < 10.0

    def test_six_quiet_days(self, timed_run):
        _, log, _ = timed_run
        days = {r.payload["issued_at"] // 86_400_000 for r in log.of_kind("alert")}
        assert days == {wed("00:00:00") // 86_400_000}

    def test_first_alert_at_first_overweight_sample(self, timed_run, rows):
        _, log, _ = timed_run
        first = log.of_kind("alert")[0].payload
        over = next(r for r in rows if r["weight"] > 14000)
        assert parse_iso(over["time"]) == first["assembled_at"]
        assert wed("10:21:00") <= first["assembled_at"] <= wed("10:23:00")

    def test_first_level2_at_weekly_extremes(self, timed_run, rows):
        _, log, _ = timed_run
        l2 = next(r.payload for r in log.of_kind("alert") if r.payload["level"] == "Level2")
        assert wed("10:27:00") <= l2["assembled_at"] <= wed("10:29:00")
        row = next(r for r in rows if parse_iso(r["time"]) == l2["assembled_at"])
        assert row["weight"] == max(r["weight"] for r in rows)
        assert row["freeboard"] == min(r["freeboard"] for r in rows)

    def test_unloaded_by_10_41(self, timed_run, rows):
        _, log, _ = timed_run
        (applied,) = log.of_kind("intervention-applied")
        after = [r for r in rows if applied.time < parse_iso(r["time"]) <= wed("10:41:00")]
        assert after and after[-1]["weight"] <= 14000


@pytest.mark.criterion(2, "sense-to-delivery latency within 0..3000 ms")
@pytest.mark.parametrize("seed", [None, 1, 2, 3, 4])
def test_latency(bundled_config, timed_run, seed):
    log = timed_run[1] if seed is None else Simulation(bundled_config.with_seed(seed)).run()
    episodes = episode_latencies(log.records)
    assert episodes
    assert all(e["latency_ms"] is not None and 0 <= e["latency_ms"] <= 3000 for e in episodes)


@pytest.mark.criterion(3, "uplink cadence 300 s when normal, 60 s in violation")
def test_cadence(rows):
    day = [r for r in rows if r["time"].startswith("2016-01-06")]
    times = [parse_iso(r["time"]) for r in day]
    emergency = [r["verdict"] == "Emergency" for r in day]
    first = emergency.index(True)
    last = len(day) - 1 - emergency[::-1].index(True)
    before = [b - a for a, b in zip(times[:first], times[1:first])]
    during = [b - a for a, b in zip(times[first:last + 1], times[first + 1:last + 1])]
    assert len(before) >= 3 and len(during) >= 10
    assert all(abs(g - 300_000) <= 100 for g in before)
    assert all(abs(g - 60_000) <= 100 for g in during)


@pytest.mark.criterion(4, "suppression oracle over 1000 random traces")
def test_suppression_oracle():
    rounds = 0
    for seed in range(1000):
        cfg, week = random_trace(seed)
        log = Simulation(cfg, week).run()
        pax = cfg.vessels[0].monitor_ids()[MonitorKind.PASSENGER].address
        found = replay_trace(log.records, cfg.timer_period_s * 1000,
                             cfg.links.pan.base_latency + cfg.links.pan.jitter, {pax})
        assert found.ok, (seed, found.cache_mismatches, found.suppression_violations,
                          found.staleness_violations)
        rounds += found.rounds_checked
    assert rounds > 1000


@pytest.mark.criterion(5, "byte-identical logs for the same scenario and seed")
@pytest.mark.parametrize("seed", [None, 7, 123456789])
def test_determinism(bundled_config, timed_run, seed):
    cfg = bundled_config if seed is None else bundled_config.with_seed(seed)
    first = timed_run[1] if seed is None else Simulation(cfg).run()
    again = Simulation(cfg).run()
    assert first.digest() == again.digest()
    assert first.dumps() == again.dumps()
    assert build_report(first.records) == build_report(again.records)


@pytest.mark.criterion(6, "geodistance and nearest station against independent oracles")
class TestGeodistance:
    def test_haversine_vs_cosine_law(self):
        rng = random.Random(6)
        for _ in range(1000):
            a = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            b = GeoPoint(rng.uniform(-90, 90), rng.uniform(-180, 180))
            expect = cosine_law_m(a.lat, a.long, b.lat, b.long)
            assert haversine_m(a, b) == pytest.approx(expect, rel=1e-3)

    def test_nearest_station_vs_argmin(self):
        rng = random.Random(66)
        ties = 0
        for n in range(100):
            if n % 2:
                query = GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170))
                points = [(rng.uniform(-60, 60), rng.uniform(-170, 170))
                          for _ in range(rng.randint(1, 15))]
            else:
                # stations mirrored across the equator are exactly equidistant from an
                # equatorial query, so every registry here is full of ties
                query = GeoPoint(0.0, rng.uniform(-170, 170))
                half = [(rng.uniform(0.1, 5), query.long + rng.uniform(-5, 5))
                        for _ in range(rng.randint(1, 8))]
                points = [p for lat, lon in half for p in ((lat, lon), (-lat, lon))]
                ties += 1
            ids = [f"st-{i:02d}" for i in range(len(points))]
            rng.shuffle(ids)
            registry = [RescueStation(sid, GeoPoint(lat, lon), f"rescue/{sid}")
                        for sid, (lat, lon) in zip(ids, points)]
            expect = brute_nearest(query.lat, query.long,
                                   [(s.station_id, s.location.lat, s.location.long) for s in registry])
            assert nearest_station(query, registry).station_id == expect
        assert ties == 50


@pytest.mark.criterion(7, "rule engine: every violation subset and the boundaries")
@pytest.mark.parametrize("weight,freeboard", [
    (13000.0, 160.0), (14500.0, 160.0), (13000.0, 149.0), (14500.0, 149.0),
    (14000.0, 150.0), (14000.1, 150.0), (14000.0, 149.9), (None, None), (14000.1, None),
])
def test_rule_engine(weight, freeboard):
    at = wed("10:00:00")
    blocks = {}
    if weight is not None:
        blocks["passenger"] = Reading(MonitorId("V1", MonitorKind.PASSENGER, "10.0.0.2"), at,
                                      Passenger(200, weight))
    if freeboard is not None:
        blocks["freeboard"] = Reading(MonitorId("V1", MonitorKind.FREEBOARD, "10.0.0.3"), at,
                                      Freeboard(170.0, freeboard))
    got = evaluate(VesselSnapshot("V1", at, **blocks), Thresholds(), at)
    verdict, level, kinds = expected_assessment(weight, freeboard)
    assert got.verdict.value == verdict
    assert (got.level.value if got.level else None) == level
    assert sorted(v.kind.value for v in got.violations) == kinds


def _window(a: str, b: str) -> tuple[int, int]:
    return wed(a), wed(b)


OUTAGES = LinkConfig(
    three_g=LinkModel(250, 100, 0.2, (_window("10:15:00", "10:24:30"), _window("10:30:00", "10:33:00"))),
    fallback=LinkModel(900, 300, 0.2, (_window("10:20:00", "10:26:00"), _window("10:31:00", "10:32:00"))),
    alert=LinkModel(1000, 500, 0.2, (_window("10:22:00", "10:23:00"),)),
)


@pytest.mark.criterion(8, "every snapshot stored once and every alert delivered once under outages")
class TestConservation:
    @pytest.mark.parametrize("seed", range(5))
    def test_bundled_week_with_outages(self, bundled_config, seed):
        log = Simulation(replace(bundled_config, links=OUTAGES, seed=seed)).run()
        problems, stats = conservation_problems(log.records)
        assert problems == []
        assert stats["alerts"] > 0 and stats["duplicates"] > 0 and stats["no_link"] > 0
        assert not log.of_kind("error")

    def test_random_traces_with_outages(self):
        start = parse_iso("2016-01-04T10:00:00Z")
        for seed in range(50):
            rng = random.Random(seed)
            cut = sorted(rng.sample(range(0, 600, 10), 4))
            win = ((start + cut[0] * 1000, start + cut[1] * 1000),
                   (start + cut[2] * 1000, start + cut[3] * 1000))
            links = LinkConfig(three_g=LinkModel(250, 100, 0.15, win),
                               fallback=LinkModel(900, 300, 0.15, win[:1]),
                               alert=LinkModel(1000, 500, 0.15, win[1:]))
            cfg, week = random_trace(seed, links=links)
            problems, _ = conservation_problems(Simulation(cfg, week).run().records)
            assert problems == [], seed
