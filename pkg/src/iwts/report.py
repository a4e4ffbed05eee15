"""Run reports rebuilt from an event log, and plottable series from a store."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from iwts.model import InputError, SimTime, to_iso
from iwts.netsim import LogRecord

SERIES_FIELDS = ("time", "weight", "freeboard", "verdict", "level")


class CorruptLog(InputError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


@dataclass(frozen=True)
class LoadedLog:
    records: list[LogRecord]
    truncated: bool
    warning: str | None = None


def _record(obj) -> LogRecord:
    if not isinstance(obj, dict) or set(obj) != {"time", "seq", "kind", "payload"}:
        raise ValueError("not an event record")
    if not isinstance(obj["time"], int) or not isinstance(obj["seq"], int):
        raise ValueError("time and seq must be integers")
    if not isinstance(obj["kind"], str) or not isinstance(obj["payload"], dict):
        raise ValueError("bad kind or payload")
    return LogRecord(obj["time"], obj["seq"], obj["kind"], obj["payload"])


def read_jsonl(path: str | Path, require_end: bool = True) -> LoadedLog:
    """Parse a JSON-lines log.

    A broken final line without a newline is a torn write: the prefix is
    kept and flagged as truncated. Any other bad line raises CorruptLog.
    With ``require_end`` a log that never reached ``run-end`` is flagged
    truncated as well.
    """
    text = Path(path).read_text()
    lines = text.split("\n")
    torn_tail = not text.endswith("\n") and text != ""
    if lines and lines[-1] == "":
        lines.pop()
    records: list[LogRecord] = []
    warning = None
    for i, line in enumerate(lines, start=1):
        try:
            rec = _record(json.loads(line))
        except (json.JSONDecodeError, ValueError) as exc:
            if torn_tail and i == len(lines):
                warning = f"line {i} is incomplete; using the first {len(records)} records"
                break
            raise CorruptLog(i, str(exc)) from None
        if rec.seq != len(records):
            raise CorruptLog(i, f"sequence {rec.seq}, expected {len(records)}")
        records.append(rec)
    truncated = warning is not None
    if require_end and not truncated and (not records or records[-1].kind != "run-end"):
        truncated = True
        warning = f"log ends after {len(records)} records without run-end"
    return LoadedLog(records, truncated, warning)


# -- series -------------------------------------------------------------------


def series_rows(records: Iterable[LogRecord], vessel: str | None = None) -> list[dict]:
    """(time, weight, freeboard, verdict, level) per stored snapshot, by assembly time."""
    snapshots: dict[tuple[str, str], dict] = {}
    rows = []
    for rec in records:
        p = rec.payload
        if vessel is not None and p.get("vessel") != vessel:
            continue
        if rec.kind == "snapshot":
            snap = p["snapshot"]
            snapshots[(p["vessel"], snap["assembled-at"])] = snap
        elif rec.kind == "assessment":
            at = to_iso(p["assembled_at"])
            snap = snapshots.get((p["vessel"], at), {})
            rows.append({
                "vessel": p["vessel"],
                "time": at,
                "weight": snap.get("passenger", {}).get("weight"),
                "freeboard": snap.get("floating-point", {}).get("actual-value"),
                "verdict": p["verdict"],
                "level": p["level"],
            })
    rows.sort(key=lambda r: (r["time"], r["vessel"]))
    return rows


def group_by_day(rows: list[dict]) -> dict[str, list[dict]]:
    days: dict[str, list[dict]] = {}
    for row in rows:
        days.setdefault(row["time"][:10], []).append(row)
    return days


def series_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SERIES_FIELDS, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: "" if row[k] is None else row[k] for k in SERIES_FIELDS})
    return buf.getvalue()


def series_json(rows: list[dict]) -> str:
    days = {day: [{k: r[k] for k in SERIES_FIELDS} for r in group]
            for day, group in group_by_day(rows).items()}
    return json.dumps({"days": days}, indent=2, sort_keys=True) + "\n"


def parse_series_csv(text: str) -> list[dict]:
    """Inverse of series_csv, for format round-trips."""
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append({
            "time": row["time"],
            "weight": float(row["weight"]) if row["weight"] else None,
            "freeboard": float(row["freeboard"]) if row["freeboard"] else None,
            "verdict": row["verdict"],
            "level": row["level"] or None,
        })
    return out


# -- run report -------------------------------------------------------------------


def alert_table(records: Iterable[LogRecord]) -> list[dict]:
    alerts: dict[int, dict] = {}
    for rec in records:
        p = rec.payload
        if rec.kind == "alert":
            alerts[p["alert_id"]] = {
                "alert_id": p["alert_id"], "vessel": p["vessel"],
                "issued_at": to_iso(p["issued_at"]), "assembled_at": to_iso(p["assembled_at"]),
                "level": p["level"], "violations": p["violations"],
                "recipients": [r["endpoint"] for r in p["recipients"]], "delivered": {},
            }
        elif rec.kind == "alert-delivered" and p["alert_id"] in alerts:
            alerts[p["alert_id"]]["delivered"].setdefault(p["endpoint"], to_iso(rec.time))
    return [alerts[k] for k in sorted(alerts)]


def episode_latencies(records: Iterable[LogRecord]) -> list[dict]:
    """Sense-to-delivery latency of the first alert after each emergency onset.

    Onset is the collector switching to Emergency; the clock starts when the
    triggering reading was sensed and stops when the last recipient of the
    first subsequent alert for that vessel has it.
    """
    onsets: list[dict] = []
    alerts: dict[int, dict] = {}
    delivered: dict[int, dict[str, SimTime]] = {}
    for rec in records:
        p = rec.payload
        if rec.kind == "mode" and p["mode"] == "Emergency":
            onsets.append({"vessel": p["vessel"], "at": rec.time, "sensed_at": p["trigger"]["sensed_at"]})
        elif rec.kind == "alert":
            alerts[p["alert_id"]] = p
        elif rec.kind == "alert-delivered":
            delivered.setdefault(p["alert_id"], {}).setdefault(p["endpoint"], rec.time)
    out = []
    for onset in onsets:
        first = next((a for a in sorted(alerts.values(), key=lambda a: a["alert_id"])
                      if a["vessel"] == onset["vessel"] and a["assembled_at"] >= onset["at"]), None)
        entry = {"vessel": onset["vessel"], "sensed_at": to_iso(onset["sensed_at"]),
                 "alert_id": None, "latency_ms": None}
        if first is not None:
            entry["alert_id"] = first["alert_id"]
            got = delivered.get(first["alert_id"], {})
            wanted = [r["endpoint"] for r in first["recipients"]]
            # an alert some recipient never received has no latency
            if all(e in got for e in wanted):
                entry["latency_ms"] = max(got[e] for e in wanted) - onset["sensed_at"]
        out.append(entry)
    return out


def build_report(records: list[LogRecord], truncated: bool = False) -> dict:
    header = next((r.payload for r in records if r.kind == "run-start"), {})
    rows = series_rows(records)
    latencies = episode_latencies(records)
    values = [e["latency_ms"] for e in latencies if e["latency_ms"] is not None]
    stats = ({"min": min(values), "median": statistics.median(values), "max": max(values)}
             if values else None)
    report = {
        "scenario": header.get("scenario"),
        "seed": header.get("seed"),
        "store_path": header.get("store_path"),
        "complete": not truncated,
        "series": {day: [{k: r[k] for k in ("vessel",) + SERIES_FIELDS} for r in group]
                   for day, group in group_by_day(rows).items()},
        "alerts": alert_table(records),
        "episodes": latencies,
        "latency_ms": stats,
        "errors": sum(1 for r in records if r.kind == "error"),
    }
    report["digest"] = report_digest(report)
    return report


def report_digest(report: dict) -> str:
    body = {k: v for k, v in report.items() if k != "digest"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def cross_check(report: dict, store: Iterable[LogRecord]) -> list[str]:
    """Differences between the report's alert table and the stored alert records."""
    stored = {r.payload["alert_id"]: r.payload for r in store if r.kind == "alert"}
    problems = []
    table = {a["alert_id"]: a for a in report["alerts"]}
    for aid in sorted(set(stored) | set(table)):
        if aid not in stored:
            problems.append(f"alert {aid} is in the report but not in the store")
        elif aid not in table:
            problems.append(f"alert {aid} is in the store but not in the report")
        elif (table[aid]["level"] != stored[aid]["level"]
              or table[aid]["issued_at"] != to_iso(stored[aid]["issued_at"])):
            problems.append(f"alert {aid} differs between report and store")
    return problems

