import subprocess
import sys

import pytest

from boundsem.cli import CONVERGENCE, RunConfig, main, run

FAMILY = """
structure near
universe 2
rule dist 0 1; 1 0
rule seq c prefix [1] tail periodic 1
pred U_0 {(0)}
fn S {0->1 1->0}

structure far
universe 2
rule dist 0 1; 1 0
rule seq c prefix [0 1] tail periodic 1
pred U_0 {(0) (1)}
fn S {0->0 1->1}
tail-start 1
"""

PI2 = "/\\{n in N} \\/{m in N} D_n(c_m, c_{m+1})"


@pytest.fixture
def family(tmp_path):
    path = tmp_path / "fam.txt"
    path.write_text(FAMILY)
    return str(path)


def cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_reports_class(capsys):
    code, out, _ = cli(capsys, "parse", "--format", "machine", CONVERGENCE)
    assert code == 0
    assert out.splitlines()[0] == "class=PiN(3)"


def test_parse_error_exit_code(capsys):
    code, _, err = cli(capsys, "parse", "U_0(")
    assert code == 2 and err.startswith("error:")


def test_formula_from_file(capsys, tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("forall x. U_0(x)")
    code, out, _ = cli(capsys, "parse", "--format", "machine", f"@{path}")
    assert code == 0 and "class=FO" in out


@pytest.mark.parametrize("index, code", [(0, 0), (1, 1)])
def test_eval_exit_codes(capsys, family, index, code):
    got, out, _ = cli(
        capsys, "eval", PI2, "--family", family, "--index", str(index), "--A", "nat:1", "--E", "nat:0", "--format", "machine"
    )
    assert got == code
    assert out.splitlines()[-1] == f"verdict={'true' if code == 0 else 'false'}"


@pytest.mark.parametrize("x, code", [(0, 0), (1, 1)])
def test_eval_with_env(capsys, family, x, code):
    got, _, _ = cli(capsys, "eval", "U_0(x)", "--family", family, "--index", "0", "--env", f"x={x}")
    assert got == code


def test_eval_bad_env(capsys, family):
    code, _, err = cli(capsys, "eval", "U_0(x)", "--family", family, "--env", "x")
    assert code == 2 and "x=3" in err


def test_eval_index_out_of_range(capsys, family):
    code, _, err = cli(capsys, "eval", PI2, "--family", family, "--index", "5", "--A", "nat:0", "--E", "nat:0")
    assert code == 2 and "outside the family" in err


def test_eval_from_encoded_fragments(capsys, family):
    code, out, _ = cli(capsys, "eval", "U_0(S(c_0))", "--family", family, "--a-frag", "*", "--e-frag", "*", "--format", "machine")
    assert code == 0 and out.splitlines() == ["a=*", "e=*", "verdict=true"]


def test_compile_and_cap(capsys):
    code, out, _ = cli(capsys, "compile", PI2, "--A", "nat:0", "--E", "nat:1", "--format", "machine")
    assert code == 0 and out.startswith("size=")
    code, _, err = cli(capsys, "compile", PI2, "--A", "nat:3", "--E", "nat:3", "--size-cap", "3")
    assert code == 2 and "error:" in err


def test_check_machine_output_is_stable(capsys, family, monkeypatch):
    args = ("check", PI2, "--family", family, "--A", "nat:1", "--E-cap", "3", "--format", "machine")
    code, first, _ = cli(capsys, *args)
    monkeypatch.setenv("BOUNDSEM_THREADS", "3")
    _, second, _ = cli(capsys, *args)
    assert first == second
    assert first.splitlines()[0].startswith("E=0 sat={")
    assert code == (0 if "winner=E=" in first else 1)


def test_check_bad_bound(capsys, family):
    code, _, err = cli(capsys, "check", PI2, "--family", family, "--A", "nat:x")
    assert code == 2 and "bound" in err


def test_missing_family_file(capsys, tmp_path):
    code, _, err = cli(capsys, "check", PI2, "--family", str(tmp_path / "nope"), "--A", "nat:1")
    assert code == 2 and err.startswith("error:")


def test_metastable_demo_alternating(capsys):
    code, out, _ = cli(capsys, "demo", "metastable", "--eps", "1/2", "--F", "mono:0->1", "--cap", "4")
    assert code == 0
    assert out.splitlines()[-1] == "verdict=true m=0 tail=2..39 agree=true"


def test_metastable_demo_parity(capsys):
    code, out, _ = cli(capsys, "demo", "metastable", "--family", "parity", "--F", "mono:0->1", "--cap", "6", "--format", "machine")
    assert code == 1
    assert out.splitlines()[-1] == "verdict=false agree=true"
    assert "winner=none" in out


def test_recurrence_demo(capsys):
    code, out, _ = cli(capsys, "demo", "recurrence", "--n-range", "3..6", "--cap", "2", "--format", "machine")
    assert code == (0 if "winner=E=" in out else 1)
    assert out.splitlines()[-1] == "prefix=4 tail-start=0"


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig("explode")
    with pytest.raises(ValueError):
        RunConfig("parse", fmt="xml")
    assert run(RunConfig("demo", demo="nothing")) == 2


def test_console_output_is_byte_identical():
    argv = [sys.executable, "-m", "boundsem.cli", "demo", "metastable", "--cap", "3", "--format", "machine"]
    runs = [subprocess.run(argv, capture_output=True, check=False) for _ in range(2)]
    assert runs[0].returncode == runs[1].returncode == 0
    assert runs[0].stdout == runs[1].stdout and runs[0].stdout
