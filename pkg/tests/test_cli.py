"""CLI surface: exit codes, overrides, and printed summaries."""

import json

import pytest

from aqsim.cli import main


def write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def evolve_config(out="art", seed=5):
    return {
        "scenario": "single",
        "engine": {"a_target": 2000, "seed": seed},
        "hamiltonian": "-sx",
        "initial_state": [1, 0],
        "time": 0.3,
        "out": out,
    }


def test_compile_prints_rule_lines(tmp_path, capsys):
    cfg = write(tmp_path, "h.json", {"hamiltonian": "-sx"})
    assert main(["compile", "--config", cfg]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8
    assert all("->" in line for line in lines)


def test_compile_writes_report_when_out_given(tmp_path, capsys):
    cfg = write(tmp_path, "h.json", {"hamiltonian": "sx@sx"})
    assert main(["compile", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["dimension"] == 4
    assert report["blocks"]


def test_compile_requires_hamiltonian(tmp_path, capsys):
    cfg = write(tmp_path, "h.json", {})
    assert main(["compile", "--config", cfg]) == 2
    assert capsys.readouterr().err.startswith("error: config.hamiltonian")


def test_evolve_prints_fidelity_and_report_path(tmp_path, capsys):
    cfg = write(tmp_path, "run.json", evolve_config())
    assert main(["evolve", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert out.startswith("fidelity 0.9")
    assert "report:" in out
    assert (tmp_path / "art" / "report.json").exists()


def test_command_scenario_mismatch(tmp_path, capsys):
    cfg = write(tmp_path, "run.json", evolve_config())
    assert main(["measure", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert "does not match command 'measure'" in err


def test_broken_json_reports_location(tmp_path, capsys):
    path = tmp_path / "run.json"
    path.write_text('{"scenario": "single",}')
    assert main(["evolve", "--config", str(path)]) == 2
    assert ":1:" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["evolve", "--config", str(tmp_path / "gone.json")]) == 2
    assert "gone.json" in capsys.readouterr().err


def test_seed_override_steers_the_run(tmp_path, capsys):
    cfg = write(tmp_path, "run.json", evolve_config())
    assert main(["evolve", "--config", cfg, "--seed", "9",
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["evolve", "--config", cfg, "--seed", "9",
                 "--out", str(tmp_path / "b")]) == 0
    assert main(["evolve", "--config", cfg, "--seed", "10",
                 "--out", str(tmp_path / "c")]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "trajectory.jsonl").read_bytes()
    b = (tmp_path / "b" / "trajectory.jsonl").read_bytes()
    c = (tmp_path / "c" / "trajectory.jsonl").read_bytes()
    assert a == b
    assert a != c
