import json
import subprocess
import sys
from pathlib import Path

import pytest

from oppl.cli import main

PROGRAMS = Path(__file__).resolve().parents[1] / "demos" / "programs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, text, name="prog.oppl"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_typecheck_prints_the_result_type(capsys):
    code, out, _ = run(capsys, "typecheck", PROGRAMS / "two_assign.oppl")
    assert code == 0
    assert json.loads(out) == {"context": "[x1: real, x2: real]",
                               "result": "store [x1: (real, 3.5), x2: (real, 7.3)]"}


def test_typecheck_tree_includes_the_derivation(capsys):
    code, out, _ = run(capsys, "typecheck", PROGRAMS / "gaussian.oppl", "--tree")
    assert code == 0 and json.loads(out)["derivation"]["rule"] == "let"


def test_type_error_exits_one_with_a_located_diagnostic(capsys):
    code, out, err = run(capsys, "typecheck", PROGRAMS / "reuse.oppl", "--ctx", "x1: int")
    assert code == 1 and out == ""
    assert "[let-disjoint]" in err and err.startswith("1:")


def test_syntax_error_exits_one(capsys):
    code, _, err = run(capsys, "run", PROGRAMS / "empty.oppl")
    assert code == 1 and err


def test_run_two_assignments(capsys):
    code, out, _ = run(capsys, "run", PROGRAMS / "two_assign.oppl")
    doc = json.loads(out)
    assert code == 0
    assert doc["space"] == ["x1=3.5, x2=7.3"]
    assert doc["coeffs"] == [pytest.approx(1.0, abs=1e-12)]
    assert set(doc) == {"space", "coeffs", "residual_mass", "clamped_mass"}


def test_run_with_input_and_residual(capsys, tmp_path):
    prog = write(tmp_path, "while x0 do x0 := sample(bernoulli(0.5))")
    code, out, _ = run(capsys, "run", prog, "--ctx", "x0: bool", "--input", '{"x0": {"true": 1}}')
    doc = json.loads(out)
    assert code == 0
    assert dict(zip(doc["space"], doc["coeffs"]))["x0=false"] == pytest.approx(1.0, abs=1e-9)
    assert doc["residual_mass"] <= 2.0 ** -30


def test_run_divergent_loop_reports_all_mass_as_residual(capsys, tmp_path):
    prog = write(tmp_path, "x0 := true ; while x0 do x0 := true")
    code, out, _ = run(capsys, "run", prog)
    doc = json.loads(out)
    assert code == 0 and doc["residual_mass"] == pytest.approx(1.0) and not any(doc["coeffs"])


def test_run_function_prints_an_operator(capsys, tmp_path):
    prog = write(tmp_path, "fn x0 . not(x0)")
    code, out, _ = run(capsys, "run", prog, "--ctx", "x0: bool")
    doc = json.loads(out)
    assert code == 0 and doc["kind"] == "operator"
    assert doc["matrix"] == [[0.0, 1.0], [1.0, 0.0]]


def test_posterior_of_the_coin_program(capsys):
    code, out, _ = run(capsys, "posterior", PROGRAMS / "coin.oppl", "--observe", "true")
    doc = json.loads(out)
    assert code == 0 and doc["observed"] == "true"
    table = dict(zip(doc["space"], doc["coeffs"]))
    assert table == {"false": pytest.approx(8 / 9), "true": pytest.approx(1 / 9)}


def test_posterior_on_an_impossible_observation_exits_two(capsys, tmp_path):
    prog = write(tmp_path, "let x0 = sample(bernoulli(0.5)) in observe(and(x0, false))")
    code, out, err = run(capsys, "posterior", prog, "--observe", "true")
    assert code == 2 and out == "" and "zero marginal mass" in err


def test_posterior_requires_an_observe_program(capsys):
    code, _, err = run(capsys, "posterior", PROGRAMS / "two_assign.oppl", "--observe", "1")
    assert code == 2 and "observe" in err


def test_config_file_and_out_file(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"real_grid": {"lo": 0, "hi": 10, "bins": 11}}))
    out = tmp_path / "out.json"
    code, stdout, _ = run(capsys, "run", PROGRAMS / "two_assign.oppl", "--config", cfg, "--out", out)
    assert code == 0 and stdout == ""
    assert json.loads(out.read_text())["space"] == ["x1=3.0, x2=7.0"]  # ties snap to the lower point


def test_verify_suites_pass(capsys):
    for suite in ("th11", "oracle", "naturality"):
        code, out, _ = run(capsys, "verify", "--suite", suite, "-n", "10")
        assert code == 0 and json.loads(out)["passed"], suite


def test_verify_with_corpus(capsys):
    corpus = Path(__file__).parent / "corpus"
    code, out, _ = run(capsys, "verify", "--suite", "oracle", "-n", "0", "--corpus", corpus)
    assert code == 0 and json.loads(out)["programs"] >= 30


def test_output_is_byte_identical_across_processes():
    cmd = [sys.executable, "-m", "oppl", "run", str(PROGRAMS / "geometric.oppl")]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b and a.endswith(b"\n")
