import subprocess
import sys

import numpy as np
import pytest

from browndim.cli import coeff_csv, load_coeff_csv, main
from browndim.deciders import decide_relative
from browndim.estimators import build_panel
from browndim.oracle import CoeffPath, lbar_true
from browndim.pathdata import load_csv, subsample
from browndim.simulator import make_model, simulate_euler

SIM = ["simulate", "--model", "sv2d", "--rho", "0.5", "--T", "10", "--h", "1e-3", "--n", "1000", "--seed", "42"]
FIG7 = ["simulate", "--model", "energy3d", "--preset", "7", "--T", "10", "--n", "1000", "--seed", "42"]


def run(argv, capsys=None):
    code = main(argv)
    out = capsys.readouterr() if capsys else None
    return code, out


def test_simulate_row_count(tmp_path):
    f = tmp_path / "path.csv"
    assert main(SIM + ["--out", str(f)]) == 0
    lines = f.read_text().splitlines()
    assert lines[0] == "time,x1,x2" and len(lines) == 1 + 1001


def test_estimate_schema(tmp_path, capsys):
    f = tmp_path / "path.csv"
    main(SIM + ["--out", str(f)])
    code, out = run(["estimate", "--in", str(f), "--t", "10", "--rmax", "2"], capsys)
    assert code == 0
    rows = [l.split(",") for l in out.out.splitlines()]
    assert rows[0] == ["t", "r", "lbar", "xi"]
    assert [r[:2] for r in rows[1:]] == [["10", "1"], ["10", "2"]]
    assert rows[1][3] != "" and rows[2][3] == ""
    panel = build_panel(load_csv(str(f)), times=[10.0], rmax=2)
    assert float(rows[1][2]) == panel.lbar[0, 0] and float(rows[1][3]) == panel.xi[0, 0]


def test_estimate_z_table(tmp_path):
    f, o, z = tmp_path / "p.csv", tmp_path / "l.csv", tmp_path / "z.csv"
    main(SIM + ["--out", str(f)])
    assert main(["estimate", "--in", str(f), "--t", "5,10", "--z", "1:1,1:2", "--out", str(o), "--z-out", str(z)]) == 0
    zl = z.read_text().splitlines()
    assert zl[0] == "t,r,rprime,z" and len(zl) == 5


def test_decide_energy_preset7_path(tmp_path, capsys):
    f = tmp_path / "fig7.csv"
    main(FIG7 + ["--out", str(f)])
    code, out = run(["decide", "--in", str(f), "--rule", "relative", "--rho", "0.01", "--t", "10"], capsys)
    assert code == 0 and "r_hat = 2" in out.out.splitlines()


def test_decide_matches_in_process(tmp_path, capsys):
    f = tmp_path / "p.csv"
    main(SIM + ["--out", str(f)])
    capsys.readouterr()
    model = make_model("sv2d", rho=0.5)
    path = subsample(simulate_euler(model, 10.0, 1e-3, seed=42).path, 1000)
    for t in ("10", "3.5"):
        _, out = run(["decide", "--in", str(f), "--t", t], capsys)
        expect = decide_relative(build_panel(path, times=[float(t)]), float(t), 0.01).to_text()
        assert out.out.strip() == expect


def test_decide_ci(tmp_path, capsys):
    f = tmp_path / "p.csv"
    main(SIM + ["--out", str(f)])
    code, out = run(["decide", "--in", str(f), "--rule", "ci", "--r", "2", "--eps", "0.1", "--alpha", "0.05"], capsys)
    assert code == 0 and "verdict:" in out.out and "gamma: 1.64485" in out.out


def test_oracle_with_coeff_file(tmp_path, capsys):
    p, c = tmp_path / "p.csv", tmp_path / "c.csv"
    assert main(SIM + ["--out", str(p), "--coeff-out", str(c), "--T", "2", "--n", "100"]) == 0
    header = c.read_text().splitlines()[0]
    assert header == "time,c11,c12,c22"
    code, out = run(["oracle", "--coeff-in", str(c), "--t", "1,2"], capsys)
    assert code == 0
    rows = [l.split(",") for l in out.out.splitlines()]
    assert rows[0] == ["t", "r", "lbar_true", "l_true", "rank_true"] and len(rows) == 5
    res = simulate_euler(make_model("sv2d", rho=0.5), 2.0, 1e-3, seed=42)
    assert float(rows[-1][2]) == pytest.approx(lbar_true(CoeffPath(1e-3, res.coeffs), 2, 2.0), rel=1e-14)
    assert rows[-1][4] == "2"


def test_coeff_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 3, 3))
    c = A @ np.swapaxes(A, 1, 2)
    f = tmp_path / "c.csv"
    f.write_text(coeff_csv(c, 0.25))
    cp = load_coeff_csv(str(f))
    assert cp.h == 0.25 and np.array_equal(cp.c, c)


def test_experiment_outputs(tmp_path):
    out = tmp_path / "exp"
    code = main(["experiment", "--model", "sv2d", "--rho", "0.5", "--T", "2", "--n", "100,200", "--times", "1,2",
                 "--reps", "6", "--true-r", "2", "--rate-r", "1", "--rho-n", "0.01", "--out", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == ["power.csv", "quantiles.csv", "rate.csv"]
    assert (out / "power.csv").read_text().splitlines()[0] == "rule,n,t,beta_hat,se"


@pytest.mark.parametrize("argv", [["bogus"], ["simulate", "--nope"], [], ["decide", "--rule", "xyz"],
                                  ["simulate", "--model", "sv2d", "--rho", "2"], ["decide"],
                                  ["experiment", "--workers", "0", "--reps", "1"]])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1


def test_runtime_error_exit_2(tmp_path, capsys):
    assert main(["decide", "--in", str(tmp_path / "missing.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("time,x1\n0,1\n1,abc\n")
    assert main(["estimate", "--in", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_config_file_and_precedence(tmp_path, capsys):
    p = tmp_path / "p.csv"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# simulation\nmodel = sv2d\nrho = 0.5\nT = 10\nh = 1e-3\nn = 1000\nseed = 42\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(p)]) == 0
    q = tmp_path / "q.csv"
    main(SIM + ["--out", str(q)])
    assert p.read_bytes() == q.read_bytes()
    r = tmp_path / "r.csv"
    main(["simulate", "--config", str(cfg), "--seed", "43", "--out", str(r)])
    assert r.read_bytes() != q.read_bytes()  # flag beats config


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == 1


def test_module_entry_point(tmp_path):
    f = tmp_path / "p.csv"
    proc = subprocess.run([sys.executable, "-m", "browndim"] + SIM + ["--n", "10", "--T", "1", "--out", str(f)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and len(f.read_text().splitlines()) == 1 + 11
    proc = subprocess.run([sys.executable, "-m", "browndim", "--bad"], capture_output=True, text=True)
    assert proc.returncode == 1


def test_decide_stdout_reproducible(tmp_path, capsys):
    f = tmp_path / "p.csv"
    main(FIG7 + ["--out", str(f)])
    capsys.readouterr()
    outs = [run(["decide", "--in", str(f), "--rule", "relative_sup"], capsys)[1].out for _ in range(2)]
    assert outs[0] == outs[1] and "warning:" in outs[0]
