import csv
import json

import pytest

from dynbatch.cli import main
from dynbatch.policy import closed_form_Q, is_control_limit
from dynbatch.queue_model import Weights
from dynbatch.solver import read_policy_csv

from conftest import constant_latency_case


def write_config(path, cfg):
    path.write_text(json.dumps(cfg.to_dict()))
    return str(path)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_fit_p4_lines(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    lines = ["b,latency_ms,energy_mJ"]
    for i, b in enumerate((1, 2, 4, 8, 16, 32, 64)):
        wiggle = 0.001 * (-1) ** i
        lines.append(f"{b},{0.3051 * b + 1.0524 + wiggle},{19.899 * b + 19.603 + 10 * wiggle}")
    pts.write_text("\n".join(lines) + "\n")
    frag = tmp_path / "frag.json"
    assert main(["fit", str(pts), "--write-config", str(frag)]) == 0
    out = capsys.readouterr().out
    assert "latency: slope=0.305" in out and "energy: slope=19.89" in out
    data = json.loads(frag.read_text())
    assert data["latency"]["slope"] == pytest.approx(0.3051, abs=1e-4)
    assert data["energy"]["intercept"] == pytest.approx(19.603, abs=0.05)


def test_fit_errors(tmp_path, capsys):
    exact = tmp_path / "e.csv"
    exact.write_text("b,latency_ms\n1,3\n5,11\n")
    assert main(["fit", str(exact)]) == 0
    assert "slope=2 intercept=1" in capsys.readouterr().out
    single = tmp_path / "s.csv"
    single.write_text("b,latency_ms\n1,3\n")
    assert main(["fit", str(single)]) == 2
    bad = tmp_path / "b.csv"
    bad.write_text("b,latency_ms\n1,3\n2,x\n")
    assert main(["fit", str(bad)]) == 2
    assert ":3:" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "missing.csv")]) == 4


def test_solve_table2_gain(tmp_path, capsys):
    code = main(["solve", "--rho", "0.9", "--w2", "1", "--c-o", "100", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    gain = float(out.split("gain")[1].split()[0])
    assert gain == pytest.approx(66.14, abs=0.05)
    assert (tmp_path / "manifest.json").exists()
    rows = read_rows(tmp_path / "report.csv")
    assert rows[0]["accepted"] == "1"


def test_solve_case1_emits_control_limit(tmp_path):
    cfg = constant_latency_case(0.5, exponential=False)
    path = write_config(tmp_path / "c.json", cfg)
    for w2 in ("0", "0.7", "100"):
        out = tmp_path / w2
        assert main(["solve", "--config", path, "--w2", w2, "--out", str(out)]) == 0
        table, _ = read_policy_csv(out / "policy.csv")
        assert is_control_limit(table, cfg) is not None


def test_solve_error_codes(tmp_path, capsys):
    assert main(["solve", "--rho", "1.2", "--out", str(tmp_path)]) == 2
    assert main(["solve", "--rho", "0.9", "--w2", "1", "--iter-max", "3", "--s-max", "80",
                 "--out", str(tmp_path)]) == 3
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 4
    (tmp_path / "bad.json").write_text("{")
    assert main(["solve", "--config", str(tmp_path / "bad.json")]) == 2


def test_closedform_prints_everything(tmp_path, capsys):
    cfg = constant_latency_case(0.5)
    path = write_config(tmp_path / "c.json", cfg)
    assert main(["closedform", "--config", path, "--w2", "1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    expected = closed_form_Q(cfg, Weights(1, 1))
    for key in ("psi", "xi", "D_1", f"D_{cfg.b_max}"):
        assert key in out
    assert out.strip().splitlines()[-1].split() == ["Q", str(expected.optimal_q)]
    assert main(["qsearch", "--config", path, "--w2", "1", "--c-o", "0", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == f"Q {expected.optimal_q}"


def test_simulate_seed_repeatable(tmp_path):
    args = ["simulate", "--rho", "0.6", "--policy", "static:8", "--requests", "20000", "--seed", "9", "--trace"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("sim.csv", "latencies.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert main(["simulate", "--rho", "0.6", "--policy", "fancy", "--out", str(tmp_path)]) == 2


def test_evaluate_policy_file(tmp_path, capsys):
    assert main(["solve", "--rho", "0.5", "--w2", "1", "--out", str(tmp_path)]) == 0
    solved = capsys.readouterr().out
    assert main(["evaluate", "--rho", "0.5", "--w2", "1", "--policy", f"table:{tmp_path / 'policy.csv'}",
                 "--s-max", "32", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.splitlines()[0] == solved.splitlines()[0]
    assert main(["evaluate", "--rho", "0.5", "--policy", "greedy", "--out", str(tmp_path)]) == 0


def test_sweep_monotone_columns(tmp_path):
    assert main(["sweep", "--rho", "0.5", "--w2-grid", "0,0.5,1,2,5,100", "--jobs", "1",
                 "--precision", "12", "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "tradeoff.csv")
    w = [float(r["w_bar_ms"]) for r in rows]
    p = [float(r["p_bar_W"]) for r in rows]
    assert all(b >= a - 1e-6 for a, b in zip(w, w[1:]))
    assert all(b <= a + 1e-6 for a, b in zip(p, p[1:]))
    assert list(rows[0]) == ["w2", "w_bar_ms", "p_bar_W", "eff_req_per_J", "policy", "s_max", "converged"]


def test_select_benchmark_truncation(tmp_path, capsys):
    assert main(["select", "--rho", "0.3", "--mean", "5", "--jobs", "1", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.startswith("w2=1.5 ")
    assert main(["select", "--rho", "0.3", "--mean", "1", "--jobs", "1", "--out", str(tmp_path)]) == 2
    assert main(["benchmark", "--rho", "0.3", "--w2-grid", "0,1", "--jobs", "1", "--out", str(tmp_path)]) == 0
    assert len(read_rows(tmp_path / "benchmark.csv")) == 2 * 5
    assert main(["truncation", "--rho", "0.9", "--w2", "1", "--c-o-grid", "100", "--s-max-grid", "40,80",
                 "--out", str(tmp_path)]) == 0
    rows = read_rows(tmp_path / "truncation.csv")
    assert [r["accepted"] for r in rows] == ["0", "1"]
