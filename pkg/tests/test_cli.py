import csv
import json
import subprocess
import sys

import pytest

from amtopo.cli import main
from test_config import TINY


@pytest.fixture
def tiny(tmp_path):
    f = tmp_path / "tiny.toml"
    f.write_text(TINY.replace("[cost]", "[vmpt]\ntol = 1e-2\nk_max = 200\n[cost]"))
    return f


def test_presets_command(capsys):
    assert main(["presets"]) == 0
    assert "cantilever" in capsys.readouterr().out.split()


def test_bad_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(TINY.replace("epsilon = 0.2\n", ""))
    assert main(["run", str(bad)]) == 2
    assert "phases.epsilon" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_unknown_set_key_exit_2(tiny, capsys):
    assert main(["run", str(tiny), "--set", "cost.nonsense=1"]) == 2
    assert "cost.nonsense" in capsys.readouterr().err
    assert main(["run", str(tiny), "--set", "novalue"]) == 2


def test_threads_env_invalid(tiny, monkeypatch):
    monkeypatch.setenv("AMTOPO_THREADS", "many")
    assert main(["run", str(tiny)]) == 2


def test_run_outputs(tiny, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", str(tiny), "--out", str(out), "--unnested"]) == 0
    text = capsys.readouterr().out
    assert "converged=True" in text
    for name in ("history.csv", "timings.csv", "final.vtk", "summary.json", "config.toml"):
        assert (out / name).is_file()
    rows = list(csv.DictReader((out / "history.csv").open()))
    assert rows and rows[0]["k"] == "1"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True
    assert summary["iterations"] == len(rows)
    assert abs(summary["j"] - (summary["F"] + 4.0 * summary["W"] + 0.02 * summary["E"])) < 1e-12 * abs(summary["j"]) + 1e-15

    # eval on the written layout reproduces the final cost
    assert main(["eval", str(tiny), str(out / "final.vtk"), "--out", str(out)]) == 0
    ev = json.loads((out / "eval.json").read_text())
    assert ev["j"] == pytest.approx(summary["j"], rel=1e-9)


def test_run_deterministic(tiny, tmp_path, monkeypatch):
    monkeypatch.setenv("AMTOPO_THREADS", "1")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(tiny), "--out", str(a), "--seed", "3"]) == 0
    assert main(["run", str(tiny), "--out", str(b), "--seed", "3"]) == 0
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()
    assert (a / "final.vtk").read_bytes() == (b / "final.vtk").read_bytes()


def test_sweep(tiny, tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", str(tiny), "--param", "beta1=0,8", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [r["value"] for r in rows] == ["0", "8"]
    assert float(rows[0]["W"]) >= float(rows[1]["W"])


def test_verify(tiny, tmp_path):
    out = tmp_path / "verify"
    assert main(["verify", str(tiny), "--out", str(out), "--directions", "2"]) == 0
    assert (out / "verify.txt").is_file() and (out / "verify.kv").is_file()


def test_console_entry_point(tiny, tmp_path):
    r = subprocess.run([sys.executable, "-m", "amtopo.cli", "run", str(tiny), "--set", "cost.layers=x"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "cost.layers" in r.stderr
