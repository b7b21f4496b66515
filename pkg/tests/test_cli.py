"""Command-line behavior: exit codes, output targets, seed resolution."""

import json

import pytest

import versim.cli as cli
from versim.domain import SimulationError
from versim.runner import RunFailedError


def _write_scenario(tmp_path, name="scenario.json", **overrides):
    data = {
        "users": 2,
        "cloud_servers": 2,
        "releases": [{"time_ms": 2000, "version_id": "V2"}],
        "runtime_arrivals": {
            "explicit": [
                {"time_ms": 1000, "user_id": "u000"},
                {"time_ms": 4000, "user_id": "u001"},
            ]
        },
        "duration_ms": 6000,
    }
    data.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_run_prints_report_json(tmp_path, capsys):
    path = _write_scenario(tmp_path)
    assert cli.main(["run", "--scenario", path]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mismatch_violations"] == 0
    assert report["availability"] == 1.0


def test_run_writes_out_and_trace_files(tmp_path, capsys):
    path = _write_scenario(tmp_path)
    out = tmp_path / "report.json"
    trace = tmp_path / "trace.tsv"
    assert cli.main(
        ["run", "--scenario", path, "--out", str(out), "--trace", str(trace)]
    ) == 0
    assert capsys.readouterr().out == ""
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["total_requests"]["RUNTIME"]["OK"] == 2
    lines = trace.read_text(encoding="utf-8").splitlines()
    assert lines, "trace file must not be empty"
    first = lines[0].split("\t")
    assert len(first) == 5
    assert first[0] == "0"  # first event fires at t=0


def test_seed_flag_beats_env_beats_file(tmp_path, capsys, monkeypatch):
    path = _write_scenario(tmp_path, seed=1)

    def report_for(argv):
        assert cli.main(argv) == 0
        return json.loads(capsys.readouterr().out)

    base = report_for(["run", "--scenario", path])
    monkeypatch.setenv("SIM_SEED", "9")
    env_run = report_for(["run", "--scenario", path])
    flag_run = report_for(["run", "--scenario", path, "--seed", "1"])
    assert flag_run == base
    assert env_run.keys() == base.keys()
    monkeypatch.setenv("SIM_SEED", "not-a-number")
    assert cli.main(["run", "--scenario", path]) == 2


def test_validate_accepts_and_describes(tmp_path, capsys):
    path = _write_scenario(tmp_path)
    assert cli.main(["validate", "--scenario", path]) == 0
    out = capsys.readouterr().out
    assert out.startswith("ok: SERVER/SINGLE_ONLINE")
    assert "2 users" in out


def test_validate_rejects_bad_strategy(tmp_path, capsys):
    path = _write_scenario(
        tmp_path, strategy={"deployment": "DEVICE", "policy": "DOUBLE"}
    )
    assert cli.main(["validate", "--scenario", path]) == 2
    assert "scenario error" in capsys.readouterr().err


def test_missing_file_is_exit_2(capsys):
    assert cli.main(["run", "--scenario", "/no/such/file.json"]) == 2
    assert "not found" in capsys.readouterr().err


def test_tripwire_death_is_exit_1(tmp_path, capsys, monkeypatch):
    path = _write_scenario(tmp_path)

    def explode(scenario, trace=False):
        raise RunFailedError(SimulationError("version skew"), at=123, seq=4)

    monkeypatch.setattr(cli, "run", explode)
    assert cli.main(["run", "--scenario", path]) == 1
    err = capsys.readouterr().err
    assert "run failed" in err and "t=123ms" in err


def test_compare_tabulates_and_dumps_rows(tmp_path, capsys):
    a = _write_scenario(tmp_path, "a.json")
    b = _write_scenario(tmp_path, "b.json", strategy={"policy": "SINGLE_OFFLINE"})
    out = tmp_path / "rows.json"
    assert cli.main(["compare", a, b, "--out", str(out)]) == 0
    table = capsys.readouterr().out
    assert "scenario" in table and "a.json" in table and "b.json" in table
    rows = json.loads(out.read_text(encoding="utf-8"))
    assert [row["scenario"] for row in rows] == ["a.json", "b.json"]
    assert all("availability" in row for row in rows)


def test_compare_keeps_going_past_bad_files(tmp_path, capsys):
    good = _write_scenario(tmp_path, "good.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    assert cli.main(["compare", good, str(bad)]) == 1
    table = capsys.readouterr().out
    assert "good.json" in table and "error:" in table


def test_list_strategies_covers_the_matrix(capsys):
    assert cli.main(["list-strategies"]) == 0
    out = capsys.readouterr().out
    for token in ("DEVICE", "SINGLE_OFFLINE", "DOUBLE", "HYBRID", "SYNC_TABLE"):
        assert token in out


def test_run_report_matches_library_run(tmp_path, capsys):
    from versim.metrics import report_to_json
    from versim.runner import run as lib_run
    from versim.scenario import load_scenario

    path = _write_scenario(tmp_path)
    assert cli.main(["run", "--scenario", path]) == 0
    cli_text = capsys.readouterr().out
    lib_text = report_to_json(lib_run(load_scenario(path)).report)
    assert cli_text == lib_text
