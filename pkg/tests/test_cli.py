import csv
import io
import json
import subprocess
import sys

import pytest

from switchbsde.cli import main
from switchbsde.instances import document, single_mode

from conftest import solved


def write_doc(tmp_path, doc, name="problem.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# schema: switchbsde.")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def doc_a(tmp_path):
    return write_doc(tmp_path, document("A"))


def test_solve_rows_and_root(capsys, doc_a):
    p, grid, sol, _, _ = solved("A")
    code, out, err = run(capsys, "solve", doc_a)
    assert code == 0
    rows = parse_csv(out)
    n_nodes = sum((k + 1) * grid.n_count(k) for k in range(grid.n_steps + 1))
    assert len(rows) == n_nodes * p.m
    roots = {int(r["mode"]): float(r["y"]) for r in rows if r["k"] == "0"}
    assert roots == {i: pytest.approx(sol.modes[i].root, abs=1e-12) for i in range(p.m)}
    rep = json.loads(err)
    assert rep["schema"] == "switchbsde.picard-report/1" and rep["converged"]


def test_solve_matches_oracle(capsys, doc_a):
    _, out_s, _ = run(capsys, "solve", doc_a)
    _, out_o, _ = run(capsys, "oracle", doc_a)
    ys = {(r["k"], r["w"], r["n"], r["mode"]): float(r["y"]) for r in parse_csv(out_s)}
    vs = {(r["k"], r["w"], r["n"], r["mode"]): float(r["v"]) for r in parse_csv(out_o)}
    assert ys.keys() == vs.keys()
    assert max(abs(ys[key] - vs[key]) for key in ys) <= 1e-9


def test_solve_writes_files(capsys, doc_a, tmp_path):
    out = tmp_path / "sol.csv"
    code, stdout, _ = run(capsys, "solve", doc_a, "--out", out)
    assert code == 0
    report = json.loads((tmp_path / "sol.report.json").read_text())
    assert report == json.loads(stdout)


def test_outputs_are_reproducible(capsys, doc_a):
    first = [run(capsys, *cmd)[1] for cmd in (("solve", doc_a), ("oracle", doc_a),
                                               ("simulate", doc_a, "--paths", 5, "--seed", 9))]
    second = [run(capsys, *cmd)[1] for cmd in (("solve", doc_a), ("oracle", doc_a),
                                                ("simulate", doc_a, "--paths", 5, "--seed", 9))]
    assert first == second


def test_simulate_layout(capsys, doc_a):
    code, out, _ = run(capsys, "simulate", doc_a, "--paths", 3, "--seed", 1, "--n-steps", 8)
    rows = parse_csv(out)
    assert code == 0 and len(rows) == 3 * 9
    assert list(rows[0]) == ["path", "k", "t", "w", "n", "outcome"]


def test_invalid_problem_exit_2(capsys, tmp_path):
    code, _, err = run(capsys, "solve", write_doc(tmp_path, document("self_cost")))
    assert code == 2
    rep = json.loads(err)
    assert rep["valid"] is False and "self_cost" in {v["kind"] for v in rep["violations"]}


def test_parse_error_exit_2(capsys, tmp_path):
    doc = document("A")
    doc["modes"][0]["terminal"] = "w"
    code, _, err = run(capsys, "oracle", write_doc(tmp_path, doc))
    assert code == 2 and json.loads(err)["violations"][0]["kind"] == "parse"


def test_unstable_grid_exit_2(capsys, tmp_path):
    doc = single_mode(kernel=(2.0,), rate=20.0, n_steps=10)
    code, _, err = run(capsys, "solve", write_doc(tmp_path, doc))
    v = json.loads(err)["violations"][0]
    assert code == 2 and v["kind"] == "stability" and v["min_steps"] == 40


@pytest.mark.parametrize("argv", [
    ("simulate", "{doc}", "--paths", "0", "--seed", "1"),
    ("simulate", "{doc}", "--paths", "5"),
    ("evaluate", "{doc}", "--paths", "10", "--seed", "1"),
    ("solve", "missing.json"),
    ("frobnicate",),
])
def test_usage_errors_exit_1(capsys, doc_a, argv):
    code, _, _ = run(capsys, *[a.format(doc=doc_a) for a in argv])
    assert code == 1


def test_nonconvergence_exit_3(capsys, tmp_path):
    code, out, err = run(capsys, "solve", write_doc(tmp_path, document("D")), "--max-iter", 1)
    assert code == 3
    assert json.loads(err)["converged"] is False
    assert parse_csv(out)


def test_evaluate_methods_agree_single_mode(capsys, tmp_path):
    doc = write_doc(tmp_path, single_mode(running_g={"affine": {"w": 1.0}}, kernel=(0.5,), rate=2.0))
    strat = tmp_path / "s.json"
    strat.write_text(json.dumps({"start_mode": 0, "switches": []}))
    res = {}
    for method in ("direct", "reweighted"):
        code, out, _ = run(capsys, "evaluate", doc, "--strategy-file", strat, "--paths", 20000, "--seed", 4,
                           "--method", method)
        assert code == 0
        res[method] = json.loads(out)
    d, r = res["direct"], res["reweighted"]
    assert d["schema"] == "switchbsde.estimate/1"
    assert abs(d["mean"] - r["mean"]) <= 3 * (d["stderr"] ** 2 + r["stderr"] ** 2) ** 0.5


def test_evaluate_snaps_switch_times(capsys, doc_a, tmp_path):
    strat = tmp_path / "s.json"
    strat.write_text(json.dumps([[0.12, 1]]))
    with pytest.warns(UserWarning, match="moved"):
        code, out, _ = run(capsys, "evaluate", doc_a, "--strategy-file", strat, "--paths", 10, "--seed", 0)
    assert code == 0 and json.loads(out)["switches"] == [[pytest.approx(0.15), 1]]


def test_verify(capsys, tmp_path):
    doc = write_doc(tmp_path, document("E"))
    code, out, _ = run(capsys, "verify", doc, "--paths", 2000, "--seed", 3, "--n-random", 3)
    rep = json.loads(out)
    assert code == 0 and rep["schema"] == "switchbsde.verify/1" and rep["n_random"] == 3


def test_selftest_entry_point():
    proc = subprocess.run([sys.executable, "-m", "switchbsde", "selftest"], capture_output=True, text=True)
    assert proc.returncode == 0
    rep = json.loads(proc.stdout)
    assert rep["passed"] and len(rep["checks"]) == 9
