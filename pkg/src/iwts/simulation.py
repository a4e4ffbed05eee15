"""Runs a scenario: monitors, collectors, links and the cloud on one event queue."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from iwts.cloud import CloudService, RecipientKind, dispatch, send_alert
from iwts.collector import (
    AssembleAndSend,
    Channel,
    Collector,
    NothingToReport,
    Request,
    RequestAll,
    SendFailure,
    send_uplink,
)
from iwts.model import (
    Freeboard,
    MonitorId,
    MonitorKind,
    NoDataYet,
    Reading,
    SimTime,
    VesselSnapshot,
    reading_from_json,
    reading_to_json,
    snapshot_to_payload,
)
from iwts.monitor import Monitor, MonitorMessage, PassengerCounter, PassengerEventKind, Reason
from iwts.netsim import Event, EventLog, EventQueue, UplinkState, run_until, transmit
from iwts.scenario import (
    FreeboardModel,
    PassengerEvent,
    ScenarioConfig,
    SenseEvent,
    TriggerKind,
    VesselConfig,
    Week,
    apply_intervention,
    generate_week,
)

log = logging.getLogger(__name__)

STORE_FILE = "store.jsonl"
TAIL_MS = 3_600_000


def message_to_json(msg: MonitorMessage) -> dict:
    return {"ip": msg.source.address, "reading": reading_to_json(msg.reading),
            "candidate": msg.emergency_candidate, "reply": msg.in_reply_to_request,
            "reason": msg.reason.value}


def message_from_json(data: dict) -> MonitorMessage:
    reading = reading_from_json(data["reading"])
    return MonitorMessage(reading.source, reading, data["candidate"], data["reply"],
                          Reason(data["reason"]))


@dataclass
class VesselRuntime:
    config: VesselConfig
    ids: dict[MonitorKind, MonitorId]
    monitors: dict[str, Monitor]
    uplink: UplinkState
    freeboard: FreeboardModel
    collector: Collector | None = None
    active: bool = False
    outbox: dict[SimTime, tuple[VesselSnapshot, dict]] = field(default_factory=dict)
    rounds: dict[int, set[str]] = field(default_factory=dict)

    @property
    def counter(self) -> PassengerCounter:
        return self.monitors[self.ids[MonitorKind.PASSENGER].address]


class Simulation:
    def __init__(self, config: ScenarioConfig, week: Week | None = None):
        self.config = config
        self.week = generate_week(config) if week is None else week
        self.queue = EventQueue(config.seed, now=0)
        self.log = EventLog()
        thresholds = {v.vessel_id: v.thresholds for v in config.vessels}
        self.cloud = CloudService(thresholds, list(config.rescue_registry), config.control_room,
                                  config.station_terminal, debounce_ms=config.debounce_s * 1000)
        self.backoff_ms = config.retry_backoff_s * 1000
        self.vessels: dict[str, VesselRuntime] = {}
        self.by_address: dict[str, VesselRuntime] = {}
        for v in config.vessels:
            ids = v.monitor_ids()
            monitors: dict[str, Monitor] = {}
            for kind, mid in ids.items():
                cls = PassengerCounter if kind is MonitorKind.PASSENGER else Monitor
                monitors[mid.address] = cls(mid, v.thresholds)
            rt = VesselRuntime(
                config=v, ids=ids, monitors=monitors,
                uplink=UplinkState(config.links.three_g, config.links.fallback),
                freeboard=self.week.freeboard_models.get(v.vessel_id)
                or FreeboardModel(v.freeboard_ref, v.freeboard_ref - v.thresholds.min_freeboard,
                                  v.thresholds.max_weight),
            )
            self.vessels[v.vessel_id] = rt
            for addr in monitors:
                self.by_address[addr] = rt
        # each monitor's PAN hop is a FIFO link: no overtaking between its messages
        self._pan_last: dict[tuple[str, str], SimTime] = {}
        self.deliveries: dict[tuple[int, str], int] = {}
        self.fired: set[int] = set()
        self._round_seq = 0
        self.handlers = {
            "session-start": self._on_session_start,
            "session-end": self._on_session_end,
            "sense": self._on_sense,
            "passenger": self._on_passenger,
            "tick": self._on_tick,
            "timer": self._on_timer,
            "pan-to-collector": self._on_collector_rx,
            "pan-to-monitor": self._on_monitor_rx,
            "uplink-deliver": self._on_uplink_deliver,
            "uplink-ack": self._on_uplink_ack,
            "uplink-retry": self._on_uplink_retry,
            "alert-deliver": self._on_alert_deliver,
            "alert-retry": self._on_alert_retry,
            "intervention": self._on_intervention,
        }
        self._schedule_scenario()

    # -- setup ----------------------------------------------------------------

    def _schedule_scenario(self) -> None:
        c = self.config
        for day in range(c.days):
            base = c.day_start(day)
            for v in c.vessels:
                self.queue.schedule_at(base + v.boarding_start * 1000,
                                       Event("session-start", {"vessel": v.vessel_id, "day": day}))
                self.queue.schedule_at(base + v.boarding_end * 1000,
                                       Event("session-end", {"vessel": v.vessel_id, "day": day}))
        for ev in self.week:
            if isinstance(ev, SenseEvent):
                self.queue.schedule_at(ev.at, Event("sense", {"reading": reading_to_json(ev.reading)}))
            else:
                self._schedule_passenger(ev)
        for i, iv in enumerate(c.interventions):
            if iv.trigger is TriggerKind.AT_TIME:
                self.fired.add(i)
                self.queue.schedule_at(iv.at, Event("intervention", {"index": i}))

    def _schedule_passenger(self, ev: PassengerEvent) -> None:
        self.queue.schedule_at(ev.at, Event("passenger", {
            "ip": ev.monitor.address, "kind": ev.kind.value, "person_weight": ev.person_weight}))

    def horizon(self) -> SimTime:
        c = self.config
        end = max(c.day_start(c.days - 1) + v.boarding_end * 1000 for v in c.vessels)
        links = (c.links.pan, c.links.three_g, c.links.fallback, c.links.alert)
        outage_end = max((e for link in links for _, e in link.outages), default=0)
        return max(end, outage_end) + TAIL_MS

    def run(self) -> EventLog:
        c = self.config
        self.log.append(c.day_start(0), "run-start", {
            "scenario": c.name, "seed": c.seed, "store_path": STORE_FILE,
            "start_date": c.start_date.isoformat(), "days": c.days,
            "vessels": {v.vessel_id: {"max_weight": v.thresholds.max_weight,
                                      "min_freeboard": v.thresholds.min_freeboard}
                        for v in c.vessels},
        })
        end = self.horizon()
        run_until(self.queue, self.handlers, end, self.log)
        self.log.append(end, "run-end", {"pending_events": len(self.queue),
                                         "store_records": len(self.cloud.store)})
        return self.log

    @property
    def store(self):
        return self.cloud.store

    def note(self, kind: str, payload: dict) -> None:
        self.log.append(self.queue.now, kind, payload)

    # -- vessel side ------------------------------------------------------------

    def _on_session_start(self, event: Event, now: SimTime) -> None:
        rt = self.vessels[event.payload["vessel"]]
        rt.active = True
        rt.rounds.clear()
        th = rt.config.thresholds
        for addr, m in rt.monitors.items():
            if isinstance(m, PassengerCounter):
                m.reset(now)
                continue
            m.pending = m.last_transmitted = None
            m.interval = th.normal_interval
            m.next_tick = now
            self.queue.schedule_at(now, Event("tick", {"ip": addr}))
        rt.collector = Collector(rt.config.vessel_id, tuple(rt.ids.values()), th,
                                 timer_period=self.config.timer_period_s, start=now)
        self.queue.schedule_at(rt.collector.timer_deadline,
                               Event("timer", {"vessel": rt.config.vessel_id}))

    def _on_session_end(self, event: Event, now: SimTime) -> None:
        self.vessels[event.payload["vessel"]].active = False

    def _after_monitor_call(self, rt: VesselRuntime, m: Monitor, before: SimTime,
                            msg: MonitorMessage | None, now: SimTime) -> None:
        if m.next_tick != before and rt.active and m.id.kind is not MonitorKind.PASSENGER:
            self.queue.schedule_at(m.next_tick, Event("tick", {"ip": m.id.address}))
        if msg is not None:
            self._send_to_collector(rt, msg)

    def _on_sense(self, event: Event, now: SimTime) -> None:
        reading = reading_from_json(event.payload["reading"])
        rt = self.by_address[reading.source.address]
        if reading.kind is MonitorKind.FREEBOARD:
            # freeboard follows the load actually aboard, so unloading shows up
            reading = Reading(reading.source, reading.at,
                              Freeboard(reading.body.ref_value, rt.freeboard.freeboard(rt.counter.weight)))
        m = rt.monitors[reading.source.address]
        before = m.next_tick
        msg = m.on_sense(reading, now)
        self.note("sensed", {"ip": m.id.address, "reading": reading_to_json(reading)})
        self._after_monitor_call(rt, m, before, msg, now)

    def _on_passenger(self, event: Event, now: SimTime) -> None:
        p = event.payload
        rt = self.by_address[p["ip"]]
        counter = rt.counter
        msg = counter.passenger_event(PassengerEventKind(p["kind"]), p["person_weight"], now)
        self.note("sensed", {"ip": p["ip"], "reading": reading_to_json(counter.pending)})
        self._send_to_collector(rt, msg)

    def _on_tick(self, event: Event, now: SimTime) -> None:
        rt = self.by_address[event.payload["ip"]]
        m = rt.monitors[event.payload["ip"]]
        if not rt.active or now != m.next_tick:
            return
        msg = m.on_tick(now)
        self.queue.schedule_at(m.next_tick, Event("tick", {"ip": m.id.address}))
        if msg is not None:
            self._send_to_collector(rt, msg)

    def _pan(self, direction: str, address: str, event: Event):
        key = (direction, address)
        tx = transmit(self.queue, self.config.links.pan, event, not_before=self._pan_last.get(key))
        if tx.delivered:
            self._pan_last[key] = tx.deliver_at
        return tx

    def _send_to_collector(self, rt: VesselRuntime, msg: MonitorMessage, round_id: int | None = None) -> None:
        body = {"vessel": rt.config.vessel_id, "message": message_to_json(msg), "round": round_id}
        tx = self._pan("up", msg.source.address, Event("pan-to-collector", body))
        self.note("monitor-tx", {**body["message"], "status": tx.status, "round": round_id})

    def _on_monitor_rx(self, event: Event, now: SimTime) -> None:
        ip, round_id = event.payload["ip"], event.payload["round"]
        rt = self.by_address[ip]
        m = rt.monitors[ip]
        try:
            msg = m.on_request(now)
        except NoDataYet:
            self.note("no-data", {"ip": ip, "round": round_id})
            self._pan("up", ip, Event("pan-to-collector", {
                "vessel": rt.config.vessel_id, "no_data": ip, "round": round_id}))
            return
        self._send_to_collector(rt, msg, round_id)

    def _on_collector_rx(self, event: Event, now: SimTime) -> None:
        p = event.payload
        rt = self.vessels[p["vessel"]]
        col = rt.collector
        if col is None:
            return
        if "no_data" in p:
            self._round_reply(rt, p["round"], p["no_data"])
            return
        msg = message_from_json(p["message"])
        mode = col.mode
        actions = col.on_monitor_message(msg, now)
        if col.mode is not mode:
            self.note("mode", {"vessel": col.vessel_id, "mode": col.mode.value,
                               "trigger": {"ip": msg.source.address, "sensed_at": msg.reading.at}})
        self._round_reply(rt, p["round"], msg.source.address)
        self._execute(rt, actions, now)

    def _round_reply(self, rt: VesselRuntime, round_id: int | None, ip: str) -> None:
        if round_id is None or round_id not in rt.rounds:
            return
        waiting = rt.rounds[round_id]
        waiting.discard(ip)
        if not waiting:
            del rt.rounds[round_id]
            cache = {m.address: reading_to_json(e.reading) for m, e in rt.collector.cache.items()}
            self.note("round-complete", {"vessel": rt.config.vessel_id, "round": round_id, "cache": cache})

    def _on_timer(self, event: Event, now: SimTime) -> None:
        rt = self.vessels[event.payload["vessel"]]
        col = rt.collector
        if not rt.active or col is None or now != col.timer_deadline:
            return
        mode = col.mode
        actions = col.on_timer_expiry(now)
        if col.mode is not mode:
            self.note("mode", {"vessel": col.vessel_id, "mode": col.mode.value, "trigger": None})
        self.queue.schedule_at(col.timer_deadline, Event("timer", {"vessel": col.vessel_id}))
        self._execute(rt, actions, now)

    def _execute(self, rt: VesselRuntime, actions, now: SimTime) -> None:
        col = rt.collector
        targets: list[MonitorId] = []
        for action in actions:
            if isinstance(action, Request):
                targets.append(action.monitor)
            elif isinstance(action, RequestAll):
                targets.extend(m for m in col.monitors if m != action.exclude)
        if targets:
            self._round_seq += 1
            rid = self._round_seq
            rt.rounds[rid] = {m.address for m in targets}
            for m in targets:
                self.note("request", {"vessel": col.vessel_id, "ip": m.address, "round": rid})
                self._pan("down", m.address, Event("pan-to-monitor", {"ip": m.address, "round": rid}))
        if any(isinstance(a, AssembleAndSend) for a in actions):
            try:
                snapshot = col.assemble_payload(now)
            except NothingToReport as exc:
                self.note("nothing-to-report", {"vessel": col.vessel_id, "reason": str(exc)})
                return
            col.record_uplink(now)
            payload = snapshot_to_payload(snapshot)
            rt.outbox[snapshot.assembled_at] = (snapshot, payload)
            self.note("uplink-assembled", {"vessel": col.vessel_id, "assembled_at": now,
                                           "mode": col.mode.value, "payload": payload})
            self._attempt_uplink(rt, snapshot.assembled_at, 1)

    def _attempt_uplink(self, rt: VesselRuntime, key: SimTime, attempt: int) -> None:
        now = self.queue.now
        snapshot, payload = rt.outbox[key]
        vid = rt.config.vessel_id
        outcome = send_uplink(snapshot, rt.uplink, now, self.backoff_ms)
        retry = Event("uplink-retry", {"vessel": vid, "key": key, "attempt": attempt})
        if isinstance(outcome, SendFailure):
            self.note("uplink-tx", {"vessel": vid, "key": key, "attempt": attempt,
                                    "channel": None, "status": "no-link"})
            self.queue.schedule_at(outcome.retry_at, retry)
            return
        link = rt.uplink.three_g if outcome.channel is Channel.THREE_G else rt.uplink.fallback
        tx = transmit(self.queue, link, Event("uplink-deliver", {
            "vessel": vid, "key": key, "channel": outcome.channel.value, "attempt": attempt,
            "payload": payload}))
        self.note("uplink-tx", {"vessel": vid, "key": key, "attempt": attempt,
                                "channel": outcome.channel.value, "status": tx.status})
        # no ack within the backoff means resend
        self.queue.schedule(self.backoff_ms, retry)

    def _on_uplink_retry(self, event: Event, now: SimTime) -> None:
        p = event.payload
        rt = self.vessels[p["vessel"]]
        if p["key"] in rt.outbox:
            self._attempt_uplink(rt, p["key"], p["attempt"] + 1)

    def _on_uplink_ack(self, event: Event, now: SimTime) -> None:
        rt = self.vessels[event.payload["vessel"]]
        rt.outbox.pop(event.payload["key"], None)

    # -- cloud side ---------------------------------------------------------------

    def _on_uplink_deliver(self, event: Event, now: SimTime) -> None:
        p = event.payload
        store = self.cloud.store
        before = len(store)
        result = self.cloud.receive(p["payload"], now)
        for rec in store.records[before:]:
            self.note(rec.kind, rec.payload)
        if result.status == "duplicate":
            self.note("duplicate", {"vessel": p["vessel"], "key": p["key"], "attempt": p["attempt"]})
        for alert in result.alerts:
            for recipient, tx in dispatch(alert, self.queue, self.config.links.alert, self.backoff_ms):
                self.note("alert-tx", {"alert_id": alert.alert_id, "endpoint": recipient.endpoint,
                                       "kind": recipient.kind.value, "attempt": 1, "status": tx.status})
        rt = self.vessels[p["vessel"]]
        link = rt.uplink.three_g if p["channel"] == Channel.THREE_G.value else rt.uplink.fallback
        transmit(self.queue, link, Event("uplink-ack", {"vessel": p["vessel"], "key": p["key"]}))

    def _on_alert_retry(self, event: Event, now: SimTime) -> None:
        p = event.payload
        tx = send_alert(self.queue, self.config.links.alert, p["alert"], p["recipient"],
                        self.backoff_ms, p["attempt"] + 1)
        self.note("alert-tx", {"alert_id": p["alert"]["alert_id"], "endpoint": p["recipient"]["endpoint"],
                               "kind": p["recipient"]["kind"], "attempt": p["attempt"] + 1,
                               "status": tx.status})

    def _on_alert_deliver(self, event: Event, now: SimTime) -> None:
        alert, recipient = event.payload["alert"], event.payload["recipient"]
        key = (alert["alert_id"], recipient["endpoint"])
        self.deliveries[key] = self.deliveries.get(key, 0) + 1
        self.note("alert-delivered", {"alert_id": alert["alert_id"], "vessel": alert["vessel"],
                                      "level": alert["level"], "kind": recipient["kind"],
                                      "endpoint": recipient["endpoint"], "copy": self.deliveries[key]})
        if recipient["kind"] == RecipientKind.CONTROL_ROOM.value and self.deliveries[key] == 1:
            self._trigger_interventions(alert, now)

    def _trigger_interventions(self, alert: dict, now: SimTime) -> None:
        for i, iv in enumerate(self.config.interventions):
            if i in self.fired or iv.trigger is not TriggerKind.ON_ALERT_LEVEL:
                continue
            if iv.vessel_id == alert["vessel"] and iv.level == alert["level"]:
                self.fired.add(i)
                self.queue.schedule(iv.response_delay_s * 1000, Event("intervention", {
                    "index": i, "alert_id": alert["alert_id"]}))

    def _on_intervention(self, event: Event, now: SimTime) -> None:
        iv = self.config.interventions[event.payload["index"]]
        rt = self.vessels[iv.vessel_id]
        counter = rt.counter
        events = apply_intervention(iv, counter.id, counter.count, counter.weight,
                                    rt.config.thresholds, now)
        self.note("intervention-applied", {
            "vessel": iv.vessel_id, "action": iv.action.value, "requested": iv.count,
            "alightings": len(events), "aboard": counter.count, "weight": counter.weight,
            "until": events[-1].at if events else now})
        for ev in events:
            self._schedule_passenger(ev)


def run_scenario(config: ScenarioConfig) -> Simulation:
    sim = Simulation(config)
    sim.run()
    return sim

