import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mftg.cli import main

QQ = """\
variant: quadratic_quadratic
grid: {T: 1.0, N: 100}
regimes:
  states: [s_lower, s_upper]
  rates: {s_upper: {s_lower: 0.7}, s_lower: {s_upper: 0.4}}
players:
  - {name: p1, coef: {qT: 0.6, r: 1.0, rbar: 1.0}}
  - {name: p2, coef: {qT: 0.6, r: 2.0, rbar: 1.0}}
simulation: {paths: 4, particles: 4}
"""

# no noise and no control effect: the state never moves
FLAT = """\
variant: log_square
grid: {T: 1.0, N: 50}
players:
  - {name: p1, coef: {q: 1.0, qT: 1.0, r: 1.0, b2: 0.0}}
state: {x0: 40.0}
simulation: {paths: 3, particles: 2}
"""

DETERMINISTIC = """\
variant: log_square
grid: {T: 1.0, N: 400}
players:
  - {name: p1, coef: {q: 1.0, qT: 1.0, r: 1.0, b2: 0.3}}
  - {name: p2, coef: {q: 0.5, qT: 2.0, r: 2.0, b2: 0.2}}
coef: {b1: -0.2}
state: {x0: 60.0}
simulation: {paths: 2, particles: 2}
verify: {value: true, deviation: true, atol: 1.0e-4}
"""

# c / omega = 32 in the beta equation: the coefficient escapes near T
STRESS = """\
variant: delayed_trend
grid: {T: 1.0, N: 200}
coef: {r1: 1.0, rbar1: 4.0, bbar2: 1.0, sigmabar: 1.0}
options: {rho: 0.5}
"""

# the published beta coefficients disagree with the simulated reward
PRINTED_DELAY = """\
variant: delayed_trend
grid: {T: 1.0, N: 200}
coef: {r1: 1.0, rbar1: 1.0, bbar2: 1.0, sigmabar: 1.0, q: 1.0, qT: 1.0}
options: {rho: 0.5, lam: 0.5, tau: 0.3, convention: printed}
simulation: {paths: 1000, particles: 1}
verify: {deviation: false}
"""


def run(tmp_path, text, command="solve", *extra, name="cfg.yaml", out="out"):
    cfg = tmp_path / name
    cfg.write_text(text)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_qq_equal_terminals_constant(tmp_path):
    assert run(tmp_path, QQ) == 0
    out = tmp_path / "out"
    rows = read_csv(out / "coefficients.csv")
    assert set(rows[0]) == {"t[time]", "regime[label]", "component[name]", "value[coef]"}
    vals = {float(r["value[coef]"]) for r in rows}
    assert vals == {0.6}
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["positivity_clean"] and diag["escaped"] is False
    assert (out / "feedback_gains.csv").exists() and (out / "config.yaml").exists()


def test_simulate_flat_state(tmp_path):
    assert run(tmp_path, FLAT, "simulate") == 0
    out = tmp_path / "out"
    xs = np.array([float(r["x[state]"]) for r in read_csv(out / "paths.csv")])
    np.testing.assert_allclose(xs, 40.0, rtol=1e-14)
    svg = (out / "state.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg
    for name in ("strategies.svg", "meanfield.svg", "simulation.json", "meanfield.csv"):
        assert (out / name).exists()


def test_simulate_is_byte_identical_for_a_seed(tmp_path):
    assert run(tmp_path, QQ, "simulate", "--seed", "11", out="a") == 0
    assert run(tmp_path, QQ, "simulate", "--seed", "11", out="b") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        if name == "config.yaml":
            continue
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert run(tmp_path, QQ, "simulate", "--seed", "12", out="c") == 0
    assert (a / "paths.csv").read_bytes() != (tmp_path / "c" / "paths.csv").read_bytes()


def test_verify_deterministic_reduction_passes(tmp_path, capsys):
    assert run(tmp_path, DETERMINISTIC, "verify") == 0
    report = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert report["passed"]
    checks = {c["check"] for c in report["checks"]}
    assert checks == {"value", "deviation"}
    assert "PASS" in capsys.readouterr().out


def test_exit_code_parse_error(tmp_path):
    assert run(tmp_path, "variant: log_state\nbogus: 1\n") == 2
    assert main(["solve", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "o")]) == 2


def test_exit_code_hypothesis(tmp_path):
    assert run(tmp_path, FLAT.replace("x0: 40.0", "x0: 2.0")) == 3


def test_exit_code_blow_up(tmp_path, capsys):
    assert run(tmp_path, STRESS) == 4
    assert "BlowUp" in capsys.readouterr().err


def test_exit_code_verification_failure(tmp_path):
    assert run(tmp_path, PRINTED_DELAY, "verify") == 5
    report = json.loads((tmp_path / "out" / "verify.json").read_text())
    assert not report["passed"]


def test_overrides(tmp_path):
    assert run(tmp_path, QQ, "simulate", "--paths", "2", "--particles", "6", "--grid", "40") == 0
    summary = json.loads((tmp_path / "out" / "simulation.json").read_text())
    assert summary["R"] == 2 and summary["M"] == 6
    t = {float(r["t[time]"]) for r in read_csv(tmp_path / "out" / "coefficients.csv")}
    assert len(t) == 41


@pytest.mark.slow
def test_reproduce_figure_table_v(tmp_path):
    cfg = Path(__file__).resolve().parent.parent / "configs" / "table_v.yaml"
    out = tmp_path / "fig"
    assert main(["reproduce-figure", "--config", str(cfg), "--out", str(out), "--paths", "20"]) == 0
    fig = json.loads((out / "figure.json").read_text())
    prof = fig["decay"]["mean_abs_x"]
    assert np.all(np.diff(np.asarray(prof, float)) < 0)
    assert (out / "figure.svg").exists()
