import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from iosskit.cli import run
from iosskit.report import dumps

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_simulate_escape(tmp_path, capsys):
    code = run(["simulate", "--config", str(CONFIGS / "simulate_escape.yaml"), "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["termination"]["kind"] == "FiniteEscape"
    assert rep["termination"]["t"] == pytest.approx(0.125, abs=1e-3)
    rows = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
    assert rows[-1, 0] <= 0.125 + 1e-9


def test_check_falsified_writes_witness_and_replays(tmp_path):
    code = run(["check", "--config", str(CONFIGS / "check_oss_sigma1.yaml"), "--out", str(tmp_path)])
    assert code == 2
    assert (tmp_path / "witness.json").exists() and (tmp_path / "witness.csv").exists()
    code = run(["replay", "--config", str(CONFIGS / "check_oss_sigma1.yaml"), "--witness",
                str(tmp_path / "witness.json"), "--out", str(tmp_path / "replay")])
    assert code == 2


def test_check_holds(tmp_path):
    cfg = {"system": "decay-observed", "seed": 4,
           "check": {"kind": "UOSS", "gains": {"beta": {"exponential": {"gain": 1.0}}, "gamma2": "id"},
                     "battery": {"n_runs": 5, "horizon": 3.0}}}
    assert run(["check", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0


def test_inline_linear_system(tmp_path):
    cfg = {"task": "linear", "system": {"A": [[0, 1], [0, 0]], "B": [[0], [1]], "C": [[1, 0]]},
           "linear": {"states": 20, "controls": 5}}
    assert run(["linear", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    np.testing.assert_allclose(np.ravel(rep["certificate"]["L"]), [-2.0, -1.0], atol=1e-9)


def test_undetectable_linear_exits_2(tmp_path):
    cfg = {"system": {"A": [[1.0]], "C": [[0.0]]}}
    assert run(["linear", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("cfg, path", [
    ({"check": {"kind": "UOSS", "gains": {}}}, "system"),
    ({"system": "nope"}, "system"),
    ({"system": "decay-observed", "check": {"kind": "XOSS", "gains": {}}}, "check.kind"),
    ({"system": "decay-observed", "check": {"kind": "UOSS", "gains": {"beta": {"exponential": {"gain": "x"}},
                                                                       "gamma2": 1}}},
     "check.gains.beta.exponential.gain"),
    ({"system": "decay-observed", "check": {"kind": "UOSS", "gains": {"beta": {"exponential": {}}}}},
     "check.gains"),
    ({"system": "decay-observed", "task": "simulate"}, "task"),
    ({"system": "decay-observed", "check": {"kind": "UOSS", "gains": {"gamma9": 1}}}, "check.gains.gamma9"),
])
def test_malformed_configs_report_key_path(tmp_path, capsys, cfg, path):
    assert run(["check", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert f"at {path}:" in err


def test_unparseable_yaml(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("system: [unclosed\n")
    assert run(["check", "--config", str(p)]) == 1


def test_lyapunov_and_observe_and_valuefn(tmp_path):
    assert run(["lyapunov", "--config", str(CONFIGS / "lyapunov_scalar.yaml"), "--out", str(tmp_path / "l")]) == 0
    cfg = yaml.safe_load((CONFIGS / "observe_double_integrator.yaml").read_text())
    cfg["observe"]["battery"]["n_runs"] = 4
    assert run(["observe", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "estimator.csv").exists()
    cfg = {"system": "decay-blind", "valuefn": {"nodes": 81, "alpha": 0.5, "spans": 10}}
    assert run(["valuefn", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "v")]) == 0
    rep = json.loads((tmp_path / "v" / "report.json").read_text())
    assert rep["bounds"]["upper_margin"] >= 0 and rep["inf_convolution"]["min_gap"] >= 0


def test_seed_changes_battery(tmp_path):
    cfg = str(CONFIGS / "check_iioss_escape.yaml")
    run(["check", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "a")])
    run(["check", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "b")])
    run(["check", "--config", cfg, "--seed", "2", "--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / k / "report.json").read_bytes() for k in "abc")
    assert a == b and a != c


def test_dumps_is_canonical():
    assert dumps({"b": np.float64(1.5), "a": [np.int64(2), float("inf")]}) == \
        '{\n  "a": [\n    2,\n    "inf"\n  ],\n  "b": 1.5\n}\n'
