import json
import math
import subprocess
import sys

import numpy as np
import pytest

from melform import cli
from melform.cli import COMMANDS, main

AMP = 2.0 * math.pi / math.cosh(math.pi / 2)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_exits_zero(capsys, command):
    code, out, _ = run(capsys, command, "--help")
    assert code == 0 and "usage:" in out


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "melform.cli", "orbit", "--help"],
                         capture_output=True, text=True, timeout=60)
    assert res.returncode == 0 and "--guess" in res.stdout


class TestOrbit:
    @pytest.mark.parametrize("guess,period", [("0,0.01,0,0", 2 / 3), ("0,0.01,6.2832,0", 1.0)])
    def test_bump_periods(self, capsys, guess, period):
        code, out, _ = run(capsys, "orbit", "--system", "paper-example", "--guess", guess)
        assert code == 0
        assert json.loads(out)["period"] == pytest.approx(period, abs=1e-8)

    @pytest.mark.parametrize("guess", ["0,0.01", "a,b,c,d", "0,nan,0,0"])
    def test_malformed_guess(self, capsys, guess):
        code, _, err = run(capsys, "orbit", "--system", "paper-example", "--guess", guess)
        assert code == 1 and "configuration error" in err

    def test_solver_failure(self, capsys):
        code, _, err = run(capsys, "orbit", "--system", "paper-example",
                           "--guess", "0,0,1.4,0.6", "--period", "0.37")
        assert code == 2 and "solver failure" in err

    def test_bad_tolerance(self, capsys):
        code, _, _ = run(capsys, "orbit", "--system", "paper-example", "--guess", "0,0.01,0,0",
                         "--tol", "1e-20")
        assert code == 1


class TestMelnikov:
    def test_default_grid(self, tmp_path, capsys):
        code, out, _ = run(capsys, "melnikov", "--out", str(tmp_path))
        assert code == 0
        rows = (tmp_path / "melnikov.csv").read_text().splitlines()
        assert rows[0] == "t0,value,err,mode,n" and len(rows) == 129
        summary = json.loads(out)
        assert summary["amplitude"] == pytest.approx(AMP, rel=1e-6)
        assert [round(z / math.pi, 6) for z in summary["zeros"]] == [0.0, 1.0]

    def test_function_of_h0_summary(self, tmp_path, capsys):
        code, out, _ = run(capsys, "melnikov", "--h1", "(p^2/2 + cos(q))^2*cos(t)",
                           "--samples", "16", "--out", str(tmp_path))
        assert code == 0
        summary = json.loads(out)
        assert summary["zeros"] == [] and summary["amplitude"] < 1e-14
        vals = np.loadtxt(tmp_path / "melnikov.csv", delimiter=",", skiprows=1,
                          usecols=1)
        assert np.max(np.abs(vals)) < 1e-14

    def test_guard_exit(self, capsys):
        code, _, err = run(capsys, "melnikov", "--system", "paper-example", "--A", "eta",
                           "--mode", "convergent", "--samples", "4")
        assert code == 3 and "neither A nor H1" in err

    def test_prescribed_diagnostics(self, tmp_path, capsys):
        code, out, _ = run(capsys, "melnikov", "--system", "paper-example", "--A", "eta",
                           "--mode", "prescribed", "--samples", "2", "--out", str(tmp_path))
        assert code == 0
        summary = json.loads(out)
        assert summary["zeros"] is None  # two samples are too few to search
        w = summary["windows"][0]
        assert len(w) >= 3 and np.ptp(w[-3:]) < 1e-6 and not summary["diverging"]

    def test_zeros(self, capsys):
        code, out, _ = run(capsys, "zeros", "--samples", "32")
        assert code == 0
        zeros = json.loads(out)
        assert len(zeros) == 2 and all(z["nondegenerate"] for z in zeros)

    def test_unparseable_h1(self, capsys):
        code, _, err = run(capsys, "melnikov", "--h1", "p*cos(t", "--samples", "4")
        assert code == 1 and "offset" in err


class TestOtherCommands:
    def test_separatrix(self, capsys):
        code, out, _ = run(capsys, "separatrix", "--points", "5")
        rows = out.splitlines()
        assert code == 0 and rows[0] == "s,q,p,t,eta" and rows[3].startswith("0,3.14159")

    def test_potential(self, capsys):
        code, out, _ = run(capsys, "potential")
        assert code == 0 and abs(json.loads(out)["L"]) < 1e-12

    def test_potential_guard(self, capsys):
        code, _, err = run(capsys, "potential", "--system", "paper-example")
        assert code == 3 and "not constant" in err

    def test_integrals(self, capsys):
        code, out, _ = run(capsys, "integrals", "--system", "paper-example")
        rep = json.loads(out)
        assert code == 0 and rep["p"] == 0
        assert sorted(rep["c_plus"] + rep["c_minus"]) == pytest.approx([2 / 3, 1, 1, 1],
                                                                       abs=1e-6)

    def test_example_paper(self, tmp_path, capsys):
        code, _, _ = run(capsys, "example-paper", "--out", str(tmp_path))
        rep = json.loads((tmp_path / "example.json").read_text())
        assert code == 0
        assert rep["period_x0"] == pytest.approx(2 / 3, abs=1e-8)
        assert rep["period_x2pi"] == pytest.approx(1.0, abs=1e-8)
        assert rep["counting"]["p"] == 0

    def test_split(self, tmp_path, capsys):
        code, _, _ = run(capsys, "split", "--eps", "1e-2,1e-3", "--phases", "1.0",
                         "--polylines", "--arclen", "3", "--out", str(tmp_path))
        assert code == 0
        rep = json.loads((tmp_path / "split.json").read_text())
        assert rep["eps"] == [0.01, 0.001] and max(rep["deviations"][1]) < 0.05
        assert (tmp_path / "unstable.csv").read_text().startswith("arclen,q,p\n")

    def test_split_config_errors(self, capsys):
        assert run(capsys, "split", "--eps", "1e-2")[0] == 1
        assert run(capsys, "split", "--eps", "1,1e-3")[0] == 1
        assert run(capsys, "split", "--system", "paper-example")[0] == 1

    def test_unknown_verify_check(self, capsys):
        code, _, err = run(capsys, "verify", "--only", "11")
        assert code == 1 and "unknown check" in err

    def test_verify_subset(self, capsys):
        code, out, _ = run(capsys, "verify", "--only", "5,9")
        assert code == 0 and "2/2 checks passed" in out

    def test_verify_flip_bracket_fails(self, capsys):
        code, out, err = run(capsys, "verify", "--only", "3", "--flip-bracket")
        assert code == 4 and "FAIL" in out and "first failing check: 3" in err


class TestConfig:
    def test_file_and_override(self, tmp_path, capsys):
        cfgfile = tmp_path / "run.json"
        cfgfile.write_text(json.dumps({"system": "paper-example", "guess": "0,0.01,0,0",
                                       "param": {"c": 1.0}}))
        code, out, _ = run(capsys, "orbit", "--config", str(cfgfile))
        assert code == 0 and json.loads(out)["period"] == pytest.approx(0.5, abs=1e-8)
        code, out, _ = run(capsys, "orbit", "--config", str(cfgfile), "--param", "c=0.5")
        assert json.loads(out)["period"] == pytest.approx(2 / 3, abs=1e-8)

    def test_bad_config(self, tmp_path, capsys):
        cfgfile = tmp_path / "run.json"
        cfgfile.write_text(json.dumps({"bogus": 1}))
        assert run(capsys, "orbit", "--config", str(cfgfile))[0] == 1
        cfgfile.write_text("{not json")
        assert run(capsys, "orbit", "--config", str(cfgfile))[0] == 1

    def test_system_file(self, tmp_path, capsys):
        path = tmp_path / "pend.sys"
        path.write_text("[pairs]\nq = \"p, circle, 2*pi\"\n\n[hamiltonian]\n"
                        "H0 = \"p^2/2 + cos(q)\"\nH1 = \"p*cos(t)\"\ntime_dependent = true\n"
                        "forcing_period = \"2*pi\"\n")
        code, out, _ = run(capsys, "zeros", "--system-file", str(path), "--samples", "32",
                           "--source", "0,0", "--target", "6.283185307179586,0")
        assert code == 0
        assert sorted(round(z["t0"] / math.pi, 5) for z in json.loads(out)) == [0.0, 1.0]


def test_determinism(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert main(["melnikov", "--samples", "24", "--out", str(d)]) == 0
        assert main(["orbit", "--system", "paper-example", "--guess", "0,0.01,0,0",
                     "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    capsys.readouterr()
    assert outs[0] == outs[1]
    assert all(b"\r" not in v for v in outs[0].values())
    first = outs[0]["melnikov.csv"].decode().splitlines()[2].split(",")
    assert len(first[1].lstrip("-").replace(".", "").split("e")[0]) >= 16


def test_dumps_format():
    assert cli.dumps({"b": [1.0, 2], "a": float("nan")}) == \
        '{\n  "a": null,\n  "b": [1, 2]\n}'
    assert cli.dumps(0.1) == "0.10000000000000001"
