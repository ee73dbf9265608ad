import csv
import hashlib
import json
import os
import subprocess
import sys

import pytest

from qftlab import config as cfgmod
from qftlab.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main, write_csv

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

SMALL_SAMPLE = {"experiment": "sample-check", "geometry": {"Nz": 1, "Ntau": 4}, "cutoff": {"T": 8.0},
                "mc": {"n_samples": 2000, "seed": 3}, "tolerances": {"z_max": 5.0}}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(autouse=True)
def _restore_thread_env(monkeypatch):
    # runs may set the BLAS thread variables; undo that after each test
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "QFTLAB_THREADS"):
        monkeypatch.setenv(var, os.environ.get(var, "1"))
    monkeypatch.delenv("QFTLAB_THREADS")


def test_bad_mass_is_config_error(tmp_path, capsys):
    assert main(["run", os.path.join(CONFIGS, "bad-mass.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "m2" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"experiment": "nope"},
    {"experiment": "sample-check", "extra": 1},
    {"experiment": "sample-check", "cutoff": {"T": 8.0, "T_grid": [8.0]}},
    {"experiment": "sample-check", "tolerances": {"z_max": 0.0}},
])
def test_invalid_configs(tmp_path, cfg):
    assert main(["validate", _write(tmp_path, cfg)]) == EXIT_CONFIG


def test_invalid_json_and_missing_file(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert main(["validate", str(p)]) == EXIT_CONFIG
    assert main(["validate", str(tmp_path / "absent.json")]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_shipped_configs_validate(capsys):
    for name in sorted(os.listdir(CONFIGS)):
        code = main(["validate", os.path.join(CONFIGS, name)])
        assert code == (EXIT_CONFIG if name == "bad-mass.json" else EXIT_OK), name


def test_run_writes_report_and_tables(tmp_path):
    out = tmp_path / "run"
    assert main(["run", _write(tmp_path, SMALL_SAMPLE), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["verdict"] == "pass"
    assert rep["config_hash"] == cfgmod.config_hash(SMALL_SAMPLE)
    assert not (out / ".lock").exists()


def test_seed_override_changes_hash(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    path = _write(tmp_path, SMALL_SAMPLE)
    main(["run", path, "--out", str(a)])
    main(["run", path, "--out", str(b), "--seed", "4"])
    ra = json.loads((a / "report.json").read_text())
    rb = json.loads((b / "report.json").read_text())
    assert rb["config"]["mc"]["seed"] == 4 and ra["config_hash"] != rb["config_hash"]


def test_locked_output_directory(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / ".lock").write_text("123")
    assert main(["run", _write(tmp_path, SMALL_SAMPLE), "--out", str(out)]) == EXIT_CONFIG
    assert "locked" in capsys.readouterr().err
    assert (out / ".lock").read_text() == "123"


def test_threads_do_not_change_numbers(tmp_path, monkeypatch):
    path = _write(tmp_path, SMALL_SAMPLE)
    assert main(["run", path, "--out", str(tmp_path / "one"), "--threads", "1"]) == EXIT_OK
    monkeypatch.setenv("QFTLAB_THREADS", "2")
    assert main(["run", path, "--out", str(tmp_path / "two")]) == EXIT_OK
    r1 = json.loads((tmp_path / "one" / "report.json").read_text())
    r2 = json.loads((tmp_path / "two" / "report.json").read_text())
    assert r2["metrics"]["threads"] == "2"
    assert r1["results"] == r2["results"]
    monkeypatch.setenv("QFTLAB_THREADS", "0")
    assert main(["run", path, "--out", str(tmp_path / "zero")]) == EXIT_CONFIG


def test_stderr_target_unmet_is_reported(tmp_path):
    out = tmp_path / "glue"
    code = main(["run", os.path.join(CONFIGS, "glue-check-small.json"), "--out", str(out)])
    assert code == EXIT_FAILED
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["verdict"] == "fail"
    assert any("stderr target unmet" in m for m in rep["results"]["messages"])


def test_sweep_writes_trend_table(tmp_path):
    cfg = {"experiment": "transfer-spectrum", "cutoff": {"T_grid": [8.0]},
           "mc": {"n_samples": 200, "seed": 1}, "check": {"tau": 1.0, "pairs": [[0.5, 0.5]]}}
    out = tmp_path / "sweep"
    code = main(["sweep", _write(tmp_path, cfg), "--param", "T", "--values", "8,16,32", "--out", str(out)])
    assert code in (EXIT_OK, EXIT_FAILED)
    with open(out / "sweep.csv", newline="", encoding="utf-8") as fh:
        raw = fh.read()
    assert "\r\n" in raw
    rows = list(csv.reader(raw.splitlines()))
    assert rows[0][:2] == ["T", "check"]
    assert {r[0] for r in rows[1:]} == {"8", "16", "32"}
    for v in ("8", "16", "32"):
        assert (out / f"T={v}" / "report.json").exists()
    assert main(["sweep", _write(tmp_path, cfg), "--param", "T", "--values", ",", "--out", str(out)]) \
        == EXIT_CONFIG


def test_replay_identical_and_tamper_detected(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", _write(tmp_path, SMALL_SAMPLE), "--out", str(out)])
    assert main(["replay", str(out / "report.json")]) == EXIT_OK
    assert "identical" in capsys.readouterr().out
    rep = json.loads((out / "report.json").read_text())
    rep["results"]["checks"][0]["observed"] = 123.0
    (out / "report.json").write_text(cfgmod.dumps(rep) + "\n")
    assert main(["replay", str(out)]) == EXIT_FAILED


def test_hash_and_float_format(tmp_path):
    a = {"experiment": "sample-check", "mc": {"seed": 1, "n_samples": 10}}
    b = {"mc": {"n_samples": 10, "seed": 1}, "experiment": "sample-check"}
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    text = cfgmod.canonical(a).encode()
    assert cfgmod.config_hash(a) == hashlib.sha1(b"blob %d\0" % len(text) + text).hexdigest()
    assert cfgmod.fmt_float(0.1) == "0.10000000000000001"
    assert float(cfgmod.fmt_float(1 / 3)) == 1 / 3
    assert cfgmod.fmt_float(float("inf")) == "Infinity"
    p = tmp_path / "t.csv"
    write_csv(str(p), ["x", "label"], [[0.1, "a,b"]])
    assert p.read_bytes() == b'x,label\r\n0.10000000000000001,"a,b"\r\n'


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "qftlab.cli", "validate", _write(tmp_path, SMALL_SAMPLE)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "valid sample-check config" in r.stdout
