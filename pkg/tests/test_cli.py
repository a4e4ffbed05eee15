import json
from importlib import resources

import jsonschema
import pytest

from iwts.cli import main
from iwts.model import parse_iso
from iwts.report import parse_series_csv, read_jsonl

VESSEL = "MV-Barisal-Express"
WEEK = ["--from", "2016-01-04T00:00:00Z", "--to", "2016-01-10T23:59:59Z"]
WED = ["--from", "2016-01-06T10:00:00Z", "--to", "2016-01-06T11:00:00Z"]


def schema(name):
    return json.loads(resources.files("iwts.schemas").joinpath(f"{name}.schema.json").read_text())


@pytest.fixture(scope="module")
def out(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["run", "paper-week.json", "--out", str(d)]) == 0
    return d


def report(capsys, *argv):
    code = main(["report", *argv])
    return code, capsys.readouterr()


class TestRun:
    def test_artifacts(self, out):
        assert {p.name for p in out.iterdir()} == {"eventlog.jsonl", "store.jsonl", "report.json"}

    def test_summary(self, out, tmp_path, capsys):
        main(["run", "paper-week.json", "--out", str(tmp_path)])
        text = capsys.readouterr().out
        alerts = json.loads((out / "report.json").read_text())["alerts"]
        assert f"alerts: {len(alerts)}" in text and "latency ms" in text
        assert sum(line.startswith("  2016-01-") for line in text.splitlines()) == 7

    def test_missing_scenario(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_invalid_scenario(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"name": "x"}')
        assert main(["run", str(bad), "--out", str(tmp_path)]) == 2

    def test_unwritable_out(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert main(["run", "paper-week.json", "--out", str(blocker)]) == 3
        assert "cannot write" in capsys.readouterr().err

    def test_seed_override_changes_log(self, out, tmp_path):
        assert main(["run", "paper-week.json", "--seed", "5", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "eventlog.jsonl").read_bytes() != (out / "eventlog.jsonl").read_bytes()


class TestReplay:
    def test_matches_run_report(self, out, capsys):
        assert main(["replay", str(out / "eventlog.jsonl")]) == 0
        assert capsys.readouterr().out == (out / "report.json").read_text()

    def test_output_file(self, out, tmp_path):
        target = tmp_path / "r.json"
        assert main(["replay", str(out / "eventlog.jsonl"), "--output", str(target)]) == 0
        assert target.read_text() == (out / "report.json").read_text()

    def test_corrupt_line_is_named(self, out, tmp_path, capsys):
        lines = (out / "eventlog.jsonl").read_text().splitlines(keepends=True)
        lines[99] = "{not json\n"
        bad = tmp_path / "bad.jsonl"
        bad.write_text("".join(lines))
        assert main(["replay", str(bad)]) == 2
        assert "line 100" in capsys.readouterr().err

    def test_reordered_lines_are_corrupt(self, out, tmp_path):
        lines = (out / "eventlog.jsonl").read_text().splitlines(keepends=True)
        lines[10], lines[11] = lines[11], lines[10]
        bad = tmp_path / "swapped.jsonl"
        bad.write_text("".join(lines))
        assert main(["replay", str(bad)]) == 2

    def test_torn_tail_reports_prefix(self, out, tmp_path, capsys):
        text = (out / "eventlog.jsonl").read_text()
        lines = text.splitlines(keepends=True)
        keep = len(lines) // 2
        torn = tmp_path / "torn.jsonl"
        torn.write_text("".join(lines[:keep]) + lines[keep][:20])
        assert main(["replay", str(torn)]) == 0
        captured = capsys.readouterr()
        assert "incomplete" in captured.err
        rep = json.loads(captured.out)
        assert rep["complete"] is False

    def test_missing_run_end_is_truncated(self, out, tmp_path, capsys):
        lines = (out / "eventlog.jsonl").read_text().splitlines(keepends=True)
        cut = tmp_path / "cut.jsonl"
        cut.write_text("".join(lines[:-1]))
        assert main(["replay", str(cut)]) == 0
        captured = capsys.readouterr()
        assert "without run-end" in captured.err
        assert json.loads(captured.out)["complete"] is False

    def test_edited_weight_changes_digest(self, out, tmp_path, capsys):
        lines = (out / "eventlog.jsonl").read_text().splitlines(keepends=True)
        i = next(i for i, line in enumerate(lines) if '"kind":"snapshot"' in line)
        rec = json.loads(lines[i])
        rec["payload"]["snapshot"]["passenger"]["weight"] += 1.0
        lines[i] = json.dumps(rec, separators=(",", ":"), sort_keys=True) + "\n"
        edited = tmp_path / "edited.jsonl"
        edited.write_text("".join(lines))
        assert main(["replay", str(edited)]) == 0
        changed = json.loads(capsys.readouterr().out)
        original = json.loads((out / "report.json").read_text())
        assert changed["digest"] != original["digest"]

    def test_missing_log(self, tmp_path):
        assert main(["replay", str(tmp_path / "nope.jsonl")]) == 2


class TestReport:
    def test_week_json_has_seven_days(self, out, capsys):
        code, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WEEK,
                           "--format", "json")
        assert code == 0
        days = json.loads(cap.out)["days"]
        assert sorted(days) == [f"2016-01-{d:02d}" for d in range(4, 11)]

    def test_csv_and_json_agree(self, out, capsys):
        _, csv_cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WEEK)
        _, json_cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WEEK,
                             "--format", "json")
        from_json = [r for day in json.loads(json_cap.out)["days"].values() for r in day]
        assert parse_series_csv(csv_cap.out) == from_json

    def test_wednesday_cadence(self, out, capsys):
        _, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WED)
        rows = parse_series_csv(cap.out)
        times = [parse_iso(r["time"]) for r in rows]
        gaps = [(b - a) / 1000 for a, b in zip(times, times[1:])]
        emergency = [r["verdict"] == "Emergency" for r in rows]
        first, last = emergency.index(True), len(emergency) - 1 - emergency[::-1].index(True)
        assert all(abs(g - 300) <= 0.1 for g in gaps[:first - 1])
        assert all(abs(g - 60) <= 0.1 for g in gaps[first:last + 1])
        assert abs(gaps[-1] - 300) <= 0.1

    def test_range_is_inclusive(self, out, capsys):
        t = "2016-01-06T10:22:00.009Z"
        _, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, "--from", t, "--to", t)
        (row,) = parse_series_csv(cap.out)
        assert row["time"] == t and row["level"] == "Level1"

    def test_unknown_vessel_is_empty(self, out, capsys):
        code, cap = report(capsys, str(out / "store.jsonl"), "--vessel", "ghost", *WEEK)
        assert code == 0 and cap.out == "time,weight,freeboard,verdict,level\n"

    def test_from_after_to(self, out, capsys):
        code, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL,
                           "--from", "2016-01-07T00:00:00Z", "--to", "2016-01-06T00:00:00Z")
        assert code == 2 and "after" in cap.err

    def test_bad_time(self, out, capsys):
        code, _ = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL,
                         "--from", "yesterday", "--to", "2016-01-06T00:00:00Z")
        assert code == 2

    def test_output_file(self, out, tmp_path, capsys):
        target = tmp_path / "w.csv"
        code, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WED,
                           "--output", str(target))
        assert code == 0 and cap.out == "" and target.read_text().startswith("time,")


class TestSchemas:
    def test_report(self, out):
        jsonschema.validate(json.loads((out / "report.json").read_text()), schema("report"))

    def test_series(self, out, capsys):
        _, cap = report(capsys, str(out / "store.jsonl"), "--vessel", VESSEL, *WEEK,
                        "--format", "json")
        jsonschema.validate(json.loads(cap.out), schema("series"))

    def test_event_log_and_payloads(self, out):
        log_schema, payload_schema = schema("eventlog"), schema("payload")
        for rec in read_jsonl(out / "eventlog.jsonl").records:
            if rec.kind in ("snapshot", "assessment", "alert", "rejection", "run-start", "mode"):
                jsonschema.validate({"time": rec.time, "seq": rec.seq, "kind": rec.kind,
                                     "payload": rec.payload}, log_schema)
            if rec.kind == "snapshot":
                jsonschema.validate(rec.payload["snapshot"], payload_schema)

    def test_scenario(self):
        data = json.loads(resources.files("iwts.data").joinpath("paper-week.json").read_text())
        jsonschema.validate(data, schema("scenario"))
