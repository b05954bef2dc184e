"""Acceptance criteria 1 to 10.

Each test prints one ``criterion N: PASS|FAIL`` line (visible with ``-s`` or in
the captured output of a failing test) and then asserts the criterion at its
stated tolerance.
"""
import json
import math
import time

import numpy as np
import pytest

from conftest import CANDIDATE, sec5
from nsgoh.checker import CheckConfig, check_goh
from nsgoh.cli import EXIT_FAIL, EXIT_PASS, main
from nsgoh.cones import PolyhedralCone, is_transversal, linearly_separated, polar
from nsgoh.field import jacobian_ae
from nsgoh.genjac import classical_bracket, clarke_jacobian, setvalued_bracket
from nsgoh.integrate import solve_forward
from nsgoh.problem import Multipliers, Piece, StrictProblem, reparametrize
from nsgoh.variations import Bracket, Needle, qdq_oracle

PRINTED = "problem-as-printed.toml"


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}".rstrip())
        return ok
    return emit


def run_check(capsys, *argv):
    code = main(["check", PRINTED, *argv])
    out, _ = capsys.readouterr()
    return code, out


def test_criterion_1_candidate_simulation(verdict):
    P = sec5()
    t0 = time.perf_counter()
    ep = solve_forward(P, CANDIDATE)
    elapsed = time.perf_counter() - t0
    end = ep.endpoint[:4]
    err = max(np.max(np.abs(end - [1, 0, 0, 1])), abs(P.cost(ep.endpoint) - 1.0))
    ok = err <= 1e-6 and elapsed < 1.0
    assert verdict(1, ok, f"error {err:.1e}, {elapsed:.3f} s")


def test_criterion_2_impulsive_simulation(verdict, impulsive_run):
    P, ep = impulsive_run
    err = max(np.max(np.abs(ep.endpoint[:4] - [1, 0, 0, 0])), abs(P.cost(ep.endpoint)),
              abs(ep.endpoint[-1] - (1 + 2 * math.sqrt(2))))
    assert verdict(2, err <= 1e-6, f"error {err:.1e}, beta {ep.endpoint[-1]:.7f}")


def goh_intervals(report):
    return [e["interval"] for row in report["conditions"]["v"]["pairs"] for e in row["table"]]


def test_criterion_3_candidate_with_variant_fields(verdict, capsys):
    code, out = run_check(capsys, "candidate.toml", "--paper-variant")
    rep = json.loads(out)
    v = {k: c["verdict"] for k, c in rep["conditions"].items()}
    ivs = goh_intervals(rep)
    near = all(max(abs(lo + 4), abs(hi + 2)) <= 0.05 for lo, hi in ivs)
    ok = (all(v[k] == "PASS" for k in ("i", "ii", "iii", "iv")) and v["v"] == "FAIL"
          and near and code == EXIT_FAIL)
    detail = ", ".join(f"{k} {v[k]}" for k in ("i", "ii", "iii", "iv", "v"))
    detail += f", ii residual {rep['conditions']['ii']['residual']:.3g}, exit {code}"
    assert verdict(3, ok, detail)


def test_criterion_3_note_as_printed_fields(capsys):
    # not a criterion: with the fields as printed, p = (0, 2 - s, -1) solves the
    # adjoint inclusion, and the Goh interval [-2, 0] contains zero at its edge
    code, out = run_check(capsys, "candidate.toml")
    rep = json.loads(out)
    v = {k: c["verdict"] for k, c in rep["conditions"].items()}
    with capsys.disabled():
        print("\nnote: as-printed fields give " + ", ".join(f"{k} {v[k]}" for k in sorted(v)))
    assert code == EXIT_PASS
    assert all(iv == pytest.approx([-2.0, 0.0], abs=1e-9) for iv in goh_intervals(rep))


def test_criterion_4_impulsive_minimizer(verdict, capsys):
    code, out = run_check(capsys, "impulsive.toml")
    rep = json.loads(out)
    v = {k: c["verdict"] for k, c in rep["conditions"].items()}
    ok = all(x == "PASS" for x in v.values()) and len(v) == 5 and code == EXIT_PASS
    assert verdict(4, ok, f"exit {code}")


def test_criterion_5_bracket_estimators(verdict, capsys, printed, variant):
    rng = np.random.default_rng(5)
    pts = np.column_stack([np.linspace(0.1, 3.0, 20), np.zeros(20), rng.uniform(-2, 2, 20)])
    worst = 0.0
    for pf in (printed, variant):
        g, h = pf.problem.g[:2]
        for x in pts:
            A = setvalued_bracket(g, h, x, "enumeration")
            B = setvalued_bracket(g, h, x, "sampling")
            worst = max(worst, A.hausdorff(B))
    code, out = run_check(capsys, "candidate.toml", "--grid", "20")
    comp = json.loads(out)["bracket_comparison"]
    printed_third = sorted(v[2] for v in comp["problem_fields"]["vertices"])
    recorded = comp["reference"]["bracket_g1_g2_third_component"] == [2.0, 4.0]
    ok = worst <= 0.05 and recorded and code in (EXIT_PASS, EXIT_FAIL)
    assert verdict(5, ok, f"max Hausdorff {worst:.2e}; as printed {printed_third} vs reference [2, 4]")


SMOOTH_PROBLEMS = [
    (["x2", "-x1"], ["1", "x2^2"], ["x1*x2", "1"]),
    (["0", "0"], ["1", "0"], ["0", "x1"]),
    (["x2", "0"], ["1 - x2^2/2", "1"], ["x1^2", "1 + x1 + x1^2/2"]),
    (["-x1", "x1*x2"], ["1 + x2^2", "x1"], ["0", "x1 - x1^3/6"]),
    (["x1^3/6", "x2"], ["x2", "-x1"], ["1", "x1 + x2"]),
]


def test_criterion_6_smooth_degeneracy(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for f, g, h in SMOOTH_PROBLEMS:
        P = StrictProblem.from_strings(n=2, m=2, f=f, g=[g, h], psi="x1^2", x0=[0.2, -0.1])
        for x in rng.uniform(-1.5, 1.5, (10, 2)):
            B = setvalued_bracket(P.g[0], P.g[1], x)
            assert B.is_singleton
            worst = max(worst, np.max(np.abs(B.vertices[0] - classical_bracket(P.g[0], P.g[1], x))))
            for F in (P.f, *P.g):
                J = clarke_jacobian(F, x)
                assert len(J) == 1
                worst = max(worst, np.max(np.abs(J.vertices[0] - jacobian_ae(F, x))))
        ep = solve_forward(P, [Piece(1.0, 0.5, (0.3, 0.2))])
        M = Multipliers.from_strings(0.0, 1.0, 0.0, ["1 + s", "-s"], 2)
        out = check_goh(P, ep, M, CheckConfig(grid=20))
        for e in out["pairs"][0]["table"]:
            y = ep.state_at(e["s"])[1:3]
            val = M.p(e["s"]) @ classical_bracket(P.g[0], P.g[1], y)
            worst = max(worst, abs(e["interval"][0] - val), abs(e["interval"][1] - val))
    assert verdict(6, worst <= 1e-6, f"max deviation {worst:.1e}")


def test_criterion_7_qdq_oracle(verdict):
    P = StrictProblem.from_strings(n=2, m=2, f=["0", "0"], g=[["1", "0"], ["0", "x1"]],
                                   psi="x1^2 + x2^2", x0=[0, 0])
    ep = solve_forward(P, [Piece(1.0, 1.0, (0.0, 0.0))])
    eps = (1e-2, 1e-3, 1e-4)
    rep = qdq_oracle(P, ep, [(0.9, Bracket(1, 2))], eps_schedule=eps)
    col = rep["columns"][0]
    d = np.array(col["distance"])
    # the quotient is exact here up to round-off, so the trend is read above NOISE_FLOOR
    bracket_ok = d[-1] < 1e-3 and col["decreasing"]

    # a drift makes needle quotients inexact, so the rate is observable
    Q = StrictProblem.from_strings(n=2, m=2, f=["x2", "-x1"], g=[["1", "0"], ["0", "x1"]],
                                   psi="x1^2 + x2^2", x0=[0.5, -0.3])
    eq = solve_forward(Q, [Piece(2.0, 1.0, (0.0, 0.0))])
    needles = qdq_oracle(Q, eq, [(0.9, Needle(0.5, (0.5, 0.0))), (1.5, Needle(0.0, (0.0, 1.0)))],
                         eps_schedule=eps)
    rates = [c["observed_rate"] for c in needles["columns"]]
    needle_ok = all(r is not None and r >= 0.9 for r in rates)
    assert verdict(7, bracket_ok and needle_ok,
                   f"bracket distances {np.array2string(d, precision=1)}, needle rates {[round(r, 3) for r in rates]}")


def random_cone(rng, dim):
    k = int(rng.integers(1, dim + 3))
    gens = rng.integers(-2, 3, (k, dim)).astype(float)
    gens = gens[np.any(gens != 0, axis=1)]
    if len(gens) == 0:
        gens = np.eye(dim)[:1]
    return PolyhedralCone(gens, rng.random(len(gens)) < 0.2, dim=dim)


def test_criterion_8_cones(verdict):
    rng = np.random.default_rng(8)
    ok = True
    for _ in range(200):
        dim = int(rng.integers(2, 6))
        C1, C2 = random_cone(rng, dim), random_cone(rng, dim)
        mu = linearly_separated(C1, C2)
        ok &= (mu is not None) == (not is_transversal(C1, C2))
        if mu is not None:
            ok &= bool(np.all(C1.rays @ mu >= -1e-9) and np.all(C2.rays @ mu <= 1e-9))
            ok &= bool(np.linalg.norm(mu) > 1e-9)
        ok &= polar(polar(C1)).equals(C1)
    assert verdict(8, ok)


def test_criterion_9_rate_independence(verdict, candidate_run):
    P, ep = candidate_run
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(1, 5))
        knots = np.sort(np.concatenate([[0.0, ep.S], rng.uniform(0, ep.S, k)]))
        slopes = rng.uniform(0.3, 3.0, k + 1)
        other = solve_forward(P, reparametrize(ep.pieces, knots, slopes), step=2e-3)
        worst = max(worst, np.max(np.abs(other.endpoint - ep.endpoint)),
                    abs(P.cost(other.endpoint) - P.cost(ep.endpoint)))
    assert verdict(9, worst <= 1e-7, f"max deviation {worst:.1e}")


def test_criterion_10_determinism(verdict, capsys, monkeypatch):
    monkeypatch.setenv("GOH_SEED", "2024")
    _, a = run_check(capsys, "candidate.toml", "--paper-variant")
    _, b = run_check(capsys, "candidate.toml", "--paper-variant")
    assert verdict(10, a == b and len(a) > 0, f"{len(a)} bytes")
