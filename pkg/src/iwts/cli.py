"""Command line: ``iwts run``, ``iwts replay`` and ``iwts report``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from iwts.cloud import query
from iwts.model import IwtsError, parse_iso, to_iso
from iwts.report import (
    CorruptLog,
    build_report,
    cross_check,
    dumps_report,
    read_jsonl,
    series_csv,
    series_json,
    series_rows,
)
from iwts.scenario import ScenarioError, load_scenario
from iwts.simulation import STORE_FILE, Simulation

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_WRITE = 3

log = logging.getLogger("iwts")


def _fail(code: int, message: str) -> int:
    print(f"iwts: {message}", file=sys.stderr)
    return code


def _summary(report: dict) -> str:
    lines = [f"scenario {report['scenario']} seed {report['seed']}"]
    for day, rows in report["series"].items():
        lines.append(f"  {day}: {len(rows)} samples, max weight "
                     f"{max((r['weight'] or 0.0) for r in rows):.1f} kg")
    lines.append(f"alerts: {len(report['alerts'])}")
    for a in report["alerts"]:
        kinds = ", ".join(v["kind"] for v in a["violations"])
        lines.append(f"  #{a['alert_id']} {a['issued_at']} {a['level']} {a['vessel']} ({kinds})")
    stats = report["latency_ms"]
    if stats:
        lines.append(f"latency ms: min {stats['min']} median {stats['median']} max {stats['max']}")
    lines.append(f"digest {report['digest']}")
    return "\n".join(lines)


def cmd_run(args) -> int:
    try:
        config = load_scenario(args.scenario)
    except ScenarioError as exc:
        return _fail(EXIT_USAGE, f"invalid scenario: {exc}")
    if args.seed is not None:
        config = config.with_seed(args.seed)
    sim = Simulation(config)
    events = sim.run()
    report = build_report(events.records)
    problems = cross_check(report, sim.store)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        events.write(out / "eventlog.jsonl")
        sim.store.write(out / STORE_FILE)
        (out / "report.json").write_text(dumps_report(report))
    except OSError as exc:
        return _fail(EXIT_WRITE, f"cannot write artifacts to {out}: {exc}")
    print(_summary(report))
    for p in problems:
        print(f"iwts: report/store mismatch: {p}", file=sys.stderr)
    if problems or report["errors"]:
        return EXIT_INTERNAL
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        loaded = read_jsonl(args.log)
    except FileNotFoundError:
        return _fail(EXIT_USAGE, f"no such log: {args.log}")
    except CorruptLog as exc:
        return _fail(EXIT_USAGE, f"corrupt event log {args.log}: {exc}")
    if loaded.warning:
        print(f"iwts: warning: {loaded.warning}", file=sys.stderr)
    report = build_report(loaded.records, truncated=loaded.truncated)
    text = dumps_report(report)
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            return _fail(EXIT_WRITE, f"cannot write {args.output}: {exc}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        start, end = parse_iso(args.start), parse_iso(args.end)
    except ValueError as exc:
        return _fail(EXIT_USAGE, f"bad time: {exc}")
    if start > end:
        return _fail(EXIT_USAGE, f"--from {to_iso(start)} is after --to {to_iso(end)}")
    try:
        loaded = read_jsonl(args.store, require_end=False)
    except FileNotFoundError:
        return _fail(EXIT_USAGE, f"no such store: {args.store}")
    except CorruptLog as exc:
        return _fail(EXIT_USAGE, f"corrupt store {args.store}: {exc}")
    if loaded.warning:
        print(f"iwts: warning: {loaded.warning}", file=sys.stderr)
    # rows are keyed by assembly time, so select on that rather than storage time
    rows = [r for r in series_rows(query(loaded.records, args.vessel, 0, 2**62), args.vessel)
            if start <= parse_iso(r["time"]) <= end]
    text = series_csv(rows) if args.format == "csv" else series_json(rows)
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            return _fail(EXIT_WRITE, f"cannot write {args.output}: {exc}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iwts", description="Vessel safety monitoring simulator.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a scenario and write its artifacts")
    run.add_argument("scenario", help="scenario JSON (bundled: paper-week.json)")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", default="out", help="artifact directory (default: out)")
    run.set_defaults(func=cmd_run)

    replay = sub.add_parser("replay", help="rebuild the run report from an event log")
    replay.add_argument("log")
    replay.add_argument("--output", help="write the report here instead of stdout")
    replay.set_defaults(func=cmd_replay)

    report = sub.add_parser("report", help="export a vessel's series from a store")
    report.add_argument("store")
    report.add_argument("--vessel", required=True)
    report.add_argument("--from", dest="start", required=True, help="ISO-8601 start")
    report.add_argument("--to", dest="end", required=True, help="ISO-8601 end")
    report.add_argument("--format", choices=("csv", "json"), default="csv")
    report.add_argument("--output", help="write here instead of stdout")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IwtsError as exc:
        log.exception("internal error")
        return _fail(EXIT_INTERNAL, str(exc))


if __name__ == "__main__":
    sys.exit(main())
