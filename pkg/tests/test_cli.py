import json
import math

import numpy as np
import pytest
import tomli

from nsgoh import io
from nsgoh.cli import EXIT_ERROR, EXIT_FAIL, EXIT_PASS, main

PRINTED = "problem-as-printed.toml"
VARIANT = "problem-paper-variant.toml"
IMPULSIVE_PROBLEM = "problem-as-printed.toml"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    return code, json.loads(out), err


SMOOTH_PROBLEM = """
[problem]
n = 2
m = 2
drift = ["0", "0"]
g = [["1", "0"], ["0", "x1"]]
psi = "x1^2 + x2^2"
x0 = [0.0, 0.0]

[cone]
generators = [[1.0, 0.0], [0.0, 1.0]]
lines = [true, true]
"""

SMOOTH_PROCESS = """
[process]
S = 1.0

[[process.pieces]]
duration = 1.0
w0 = 1.0
w = [0.0, 0.0]
"""


@pytest.fixture
def smooth_files(tmp_path):
    prob = tmp_path / "toy.toml"
    proc = tmp_path / "rest.toml"
    prob.write_text(SMOOTH_PROBLEM)
    proc.write_text(SMOOTH_PROCESS)
    return prob, proc


# -- simulate ----------------------------------------------------------------------------------

def test_simulate_candidate(capsys):
    code, out, _ = run(capsys, "simulate", PRINTED, "candidate.toml")
    assert code == EXIT_PASS
    assert out.startswith("(1, 0, 0, 1) cost 1")


def test_simulate_impulsive(capsys):
    code, out, _ = run(capsys, "simulate", PRINTED, "impulsive.toml")
    assert code == EXIT_PASS
    assert out.strip() == "(1, 0, 0, 0) cost 0 beta 3.8284271"


def test_simulate_csv(capsys, tmp_path):
    path = tmp_path / "traj.csv"
    code, _, _ = run(capsys, "simulate", PRINTED, "candidate.toml", "--csv", path, "--every", 1000)
    assert code == EXIT_PASS
    lines = path.read_text().splitlines()
    assert lines[0] == "s,y0,x1,x2,x3,yl,beta"
    last = [float(v) for v in lines[-1].split(",")]
    assert last[:5] == pytest.approx([2.0, 1.0, 0.0, 0.0, 1.0], abs=1e-9)


def test_simulate_empty_process_is_an_error(capsys, tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("[process]\nS = 1.0\npieces = []\n")
    code, _, err = run(capsys, "simulate", PRINTED, path)
    assert code == EXIT_ERROR
    assert "empty" in err


def test_simulate_control_outside_cone(capsys, tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text(SMOOTH_PROCESS.replace("w = [0.0, 0.0]", "w = [0.0]"))
    code, _, err = run(capsys, "simulate", PRINTED, path)
    assert code == EXIT_ERROR
    assert "pieces[0]" in err


def test_missing_problem_file(capsys):
    code, _, err = run(capsys, "simulate", "no-such-problem.toml", "candidate.toml")
    assert code == EXIT_ERROR
    assert "no such file" in err


# -- check -----------------------------------------------------------------------------------

def test_check_paper_variant_fails_v(capsys):
    code, rep, _ = run_json(capsys, "check", PRINTED, "candidate.toml", "--paper-variant")
    assert code == EXIT_FAIL
    assert rep["conditions"]["v"]["verdict"] == "FAIL"
    assert rep["provenance"]["paper_variant"] is True
    comp = rep["bracket_comparison"]
    assert comp["reference"]["bracket_g1_g2_third_component"] == [2.0, 4.0]


def test_check_impulsive_passes(capsys):
    code, rep, _ = run_json(capsys, "check", PRINTED, "impulsive.toml")
    assert code == EXIT_PASS
    assert rep["overall"] == "PASS"
    assert rep["report_version"] == 1


def test_check_missing_multipliers_file(capsys):
    code, _, err = run(capsys, "check", PRINTED, "candidate.toml", "--multipliers", "nope.toml")
    assert code == EXIT_ERROR
    assert "nope.toml" in err


def test_check_without_multipliers_section(capsys, smooth_files):
    prob, proc = smooth_files
    code, _, err = run(capsys, "check", prob, proc)
    assert code == EXIT_ERROR
    assert "multipliers" in err


def test_check_variant_needs_alt_fields(capsys, smooth_files, tmp_path):
    prob, _ = smooth_files
    mfile = tmp_path / "m.toml"
    mfile.write_text('[multipliers]\np0 = 0.0\nlambda = 1.0\npi = 0.0\np = ["0", "0"]\n')
    code, _, err = run(capsys, "check", prob, smooth_files[1], "--multipliers", mfile,
                       "--paper-variant")
    assert code == EXIT_ERROR
    assert "alt_fields" in err


def test_check_writes_out_file(capsys, tmp_path):
    out = tmp_path / "rep.json"
    code, stdout, _ = run(capsys, "check", PRINTED, "impulsive.toml", "--grid", 40, "--out", out)
    assert code == EXIT_PASS and stdout == ""
    assert json.loads(out.read_text())["overall"] == "PASS"


def test_check_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("GOH_SEED", "11")
    _, a, _ = run(capsys, "check", PRINTED, "impulsive.toml", "--grid", 40, "--seed", 3)
    _, b, _ = run(capsys, "check", PRINTED, "impulsive.toml", "--grid", 40, "--seed", 5)
    assert a == b
    assert json.loads(a)["provenance"]["config"]["seed"] == 11


def test_bad_seed_environment(capsys, monkeypatch):
    monkeypatch.setenv("GOH_SEED", "abc")
    code, _, err = run(capsys, "check", PRINTED, "impulsive.toml")
    assert code == EXIT_ERROR
    assert "GOH_SEED" in err


# -- bracket ---------------------------------------------------------------------------------

def test_bracket_both_methods(capsys):
    code, out, _ = run_json(capsys, "bracket", PRINTED, "--point", 1, 0, 0, "--method", "both")
    assert code == EXIT_PASS
    assert set(out["hulls"]) == {"enumeration", "sampling"}
    assert out["hausdorff"] < 0.05


def test_bracket_covector_variant(capsys):
    code, out, _ = run_json(capsys, "bracket", PRINTED, "--point", 1, 0, 0, "--paper-variant",
                            "--covector", "0 2-s -1", "--s", 0)
    assert code == EXIT_PASS
    assert out["intervals"]["enumeration"] == [-4.0, -2.0]


def test_bracket_smooth_singleton(capsys, smooth_files):
    code, out, _ = run_json(capsys, "bracket", smooth_files[0], "--point", 0.3, -2)
    assert code == EXIT_PASS
    assert out["hulls"]["enumeration"] == [[0.0, 1.0]]


def test_bracket_point_dimension(capsys):
    code, _, err = run(capsys, "bracket", PRINTED, "--point", 1, 0)
    assert code == EXIT_ERROR
    assert "--point" in err


# -- variations ------------------------------------------------------------------------------

def test_variations_needle_on_toy(capsys, smooth_files, tmp_path):
    prob, proc = smooth_files
    spec = tmp_path / "v.toml"
    spec.write_text("[[variations]]\ns = 0.5\nneedle = {w0 = 1.0, w = [1.0, 0.0]}\n")
    code, rep, _ = run_json(capsys, "variations", prob, proc, "--spec", spec)
    assert code == EXIT_PASS
    (col,) = rep["columns"]
    assert col["verdict"] == "PASS"


def test_variations_bracket_on_candidate(capsys):
    code, rep, _ = run_json(capsys, "variations", PRINTED, "candidate.toml", "--paper-variant",
                            "--bracket", 1.0, 1, 2)
    (col,) = rep["columns"]
    assert col["generator"] == {"bracket": [1, 2]}
    d = col["distance"]
    assert d[-1] <= d[0]
    assert code in (EXIT_PASS, EXIT_FAIL)


def test_variations_window_too_large(capsys, smooth_files):
    prob, proc = smooth_files
    code, _, err = run(capsys, "variations", prob, proc, "--bracket", 0.5, 1, 2,
                       "--eps-schedule", "1e-2")
    assert code == EXIT_ERROR
    assert "sqrt(eps)" in err


def test_variations_need_a_spec(capsys, smooth_files):
    code, _, err = run(capsys, "variations", *smooth_files)
    assert code == EXIT_ERROR


# -- search ------------------------------------------------------------------------------------

def test_search_candidate(capsys):
    code, out, _ = run_json(capsys, "search", PRINTED, "candidate.toml")
    assert code == EXIT_PASS and out["feasible"]
    for row in out["survivors"]:
        s = np.array(row["p_samples"]["s"])
        p = np.array(row["p_samples"]["p"]) / -row["p0"]
        assert np.max(np.abs(p[:, 1] - (2 - s))) < 1e-4


def test_search_impulsive(capsys):
    code, out, _ = run_json(capsys, "search", PRINTED, "impulsive.toml")
    assert code == EXIT_PASS
    for row in out["survivors"]:
        assert row["p0"] == pytest.approx(0.0, abs=1e-12)
        assert row["lambda"] == pytest.approx(1.0)
        assert np.max(np.abs(row["p_samples"]["p"])) < 1e-12


def test_search_cap_on_many_kinks(capsys, tmp_path):
    n = 10
    g = ", ".join(['"1"'] + [f'"abs(x{k})"' for k in range(2, n + 1)])
    prob = tmp_path / "kinks.toml"
    prob.write_text(f"""
[problem]
n = {n}
m = 1
drift = {json.dumps(["0"] * n)}
g = [[{g}]]
psi = "x1^2"
x0 = {json.dumps([0.0] * n)}

[cone]
generators = [[1.0]]
lines = [true]
""")
    proc = tmp_path / "p.toml"
    proc.write_text("[process]\nS = 1.0\n\n[[process.pieces]]\nduration = 1.0\nw0 = 0.5\nw = [0.5]\n")
    code, _, err = run(capsys, "search", prob, proc)
    assert code == EXIT_ERROR
    assert "exceed the cap 256" in err


# -- extend ------------------------------------------------------------------------------------

def test_extend_strict_control(capsys, tmp_path):
    src = tmp_path / "strict.toml"
    src.write_text("[[strict.pieces]]\nduration = 1.0\nu = [-1.0, 0.0]\n")
    code, out, _ = run(capsys, "extend", PRINTED, src)
    assert code == EXIT_PASS
    (piece,) = tomli.loads(out)["process"]["pieces"]
    assert (piece["duration"], piece["w0"], piece["w"]) == (2.0, 0.5, [-0.5, 0.0])


def test_extend_canonical_rescale(capsys, tmp_path):
    src = tmp_path / "proc.toml"
    src.write_text("[process]\nS = 1.0\n\n[[process.pieces]]\nduration = 1.0\nw0 = 1.0\nw = [1.0, 0.0]\n")
    code, out, _ = run(capsys, "extend", PRINTED, src, "--canonical")
    assert code == EXIT_PASS
    (piece,) = tomli.loads(out)["process"]["pieces"]
    assert (piece["duration"], piece["w0"], piece["w"]) == (2.0, 0.5, [0.5, 0.0])


# -- files -------------------------------------------------------------------------------------

@pytest.mark.parametrize("name", [PRINTED, VARIANT])
def test_problem_files_round_trip(name):
    pf = io.load_problem(io.example_path(name))
    doc = io.problem_to_doc(pf)
    again = io.problem_from_doc(tomli.loads(io.dumps(doc)), name)
    assert io.problem_to_doc(again) == doc
    assert np.array_equal(again.problem.target_point, pf.problem.target_point)


@pytest.mark.parametrize("name", ["candidate.toml", "impulsive.toml"])
def test_process_files_round_trip(name, printed):
    P = printed.problem
    pf = io.load_process(io.example_path(name), P)
    doc = io.pieces_to_doc(pf.pieces)
    again = io.pieces_from_doc(tomli.loads(io.dumps(doc))["process"]["pieces"], P, name)
    assert again == pf.pieces
    ms = io.multipliers_from_doc(pf.multipliers, name)
    ms2 = io.multipliers_from_doc(tomli.loads(io.dumps(io.multipliers_to_doc(ms)))["multipliers"], name)
    assert io.multipliers_to_doc(ms2) == io.multipliers_to_doc(ms)


def test_variant_files_swap_fields(printed, variant):
    assert printed.alt_fields[0].components == variant.problem.g[0].components
    assert variant.alt_fields[0].components == printed.problem.g[0].components


def test_impulsive_schedule_length():
    doc = io.load_toml(io.example_path("impulsive.toml"))
    assert doc["process"]["S"] == pytest.approx(2 + 2 * math.sqrt(2))
