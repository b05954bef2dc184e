import math

import numpy as np
import pytest

from conftest import CANDIDATE, sec5, smooth_toy
from nsgoh.integrate import solve_forward
from nsgoh.problem import Piece, StrictProblem
from nsgoh.variations import (
    NOISE_FLOOR, Bracket, Needle, WindowError, additivity_remainder, apply_bracket, apply_needle,
    endpoint_map, needle_reference, qdq_oracle, variation_vector,
)

REST = [Piece(1.0, 1.0, (0.0, 0.0))]


def lq_toy(drift=("x2", "-x1")) -> StrictProblem:
    return StrictProblem.from_strings(n=2, m=2, f=list(drift), g=[["1", "0"], ["0", "1"]],
                                      l0="x1^2 + x2^2", psi="x1^2", x0=[0.5, -0.3])


@pytest.fixture(scope="module")
def lq_run():
    P = lq_toy()
    return P, solve_forward(P, [Piece(1.2, 1.0, (0.3, -0.1)), Piece(0.8, 0.5, (-0.2, 0.4))])


# -- construction --------------------------------------------------------------------------

def test_needle_zero_eps_is_identity():
    assert apply_needle(CANDIDATE, 1.0, Needle(1.0, (0.0, 0.0)), 0.0) == CANDIDATE


def test_needle_construction_on_candidate():
    out = apply_needle(CANDIDATE, 1.0, Needle(1.0, (0.0, 0.0)), 0.1)
    assert [p.duration for p in out] == pytest.approx([0.9, 0.1, 1.0])
    assert (out[1].w0, out[1].w) == (1.0, (0.0, 0.0))
    assert out[0].w == out[2].w == (-0.5, 0.0)


def test_disjoint_needles_commute():
    c1, c2 = Needle(1.0, (0.0, 0.0)), Needle(0.0, (0.0, 1.0))
    a = apply_needle(apply_needle(CANDIDATE, 0.5, c1, 0.1), 1.5, c2, 0.2)
    b = apply_needle(apply_needle(CANDIDATE, 1.5, c2, 0.2), 0.5, c1, 0.1)
    assert len(a) == len(b) == 5
    for p, q in zip(a, b):
        assert p.duration == pytest.approx(q.duration, abs=1e-15)
        assert (p.w0, p.w) == (q.w0, q.w)


def test_needle_window_error():
    with pytest.raises(WindowError):
        apply_needle(CANDIDATE, 0.1, Needle(1.0, (0.0, 0.0)), 0.1)


def test_bracket_segments():
    eps = 1e-2
    out = apply_bracket(CANDIDATE, 1.5, Bracket(1, 2), eps)
    r = math.sqrt(eps)
    durations = [p.duration for p in out]
    assert durations == pytest.approx([1.5 - 8 * r, 4 * r, r, r, r, r, 0.5])
    assert sum(durations[1:6]) == pytest.approx(8 * r)
    assert (out[1].w0, out[1].w) == (1.0, (-1.0, 0.0))
    assert [p.w for p in out[2:6]] == [(1, 0), (0, 1), (-1, 0), (0, -1)]
    assert all(p.w0 == 0 for p in out[2:6])


def test_bracket_window_error():
    with pytest.raises(WindowError):
        apply_bracket(CANDIDATE, 0.5, Bracket(1, 2), 1e-2)


def test_bracket_indices_validated():
    with pytest.raises(ValueError):
        Bracket(1, 1)


def test_bracket_legs_freeze_clock(candidate_run):
    P, _ = candidate_run
    pieces = apply_bracket(CANDIDATE, 1.5, Bracket(1, 2), 1e-2)
    ep = solve_forward(P, pieces)
    for k in range(2, 6):
        _, _, dY = ep.samples[k]
        assert np.all(dY[:, 0] == 0.0)
        assert np.all(dY[:, -1] == 1.0)


def test_overlapping_windows_rejected(candidate_run):
    P, ep = candidate_run
    c = Needle(1.0, (0.0, 0.0))
    with pytest.raises(WindowError):
        endpoint_map(P, ep, [(1.0, c), (1.05, c)], [0.1, 0.1])


# -- endpoint map ---------------------------------------------------------------------------

def test_endpoint_map_zero_is_reference(lq_run):
    P, ep = lq_run
    c = Needle(1.0, (0.0, 0.0))
    Y = endpoint_map(P, ep, [(0.7, c), (1.5, c)], [0.0, 0.0])
    assert np.array_equal(Y, ep.endpoint)


def test_smooth_bracket_quotient():
    P = smooth_toy()
    ep = solve_forward(P, REST)
    for eps in (1e-2, 1e-3, 1e-4):
        Y = endpoint_map(P, ep, [(1.0, Bracket(1, 2))], [eps])
        assert np.allclose((Y - ep.endpoint)[1:3] / eps, [0.0, 1.0], atol=1e-9)


def test_reversed_legs_negate_bracket():
    P = smooth_toy()
    ep = solve_forward(P, REST)
    eps = 1e-3
    pieces = apply_bracket(REST, 1.0, Bracket(1, 2), eps)
    legs = pieces[-4:]
    flipped = [Piece(p.duration, 0.0, tuple(-v for v in p.w)) for p in legs[::-1]]
    fwd = solve_forward(P, pieces).endpoint - ep.endpoint
    rev = solve_forward(P, pieces[:-4] + flipped).endpoint - ep.endpoint
    assert np.allclose(rev[1:3], -fwd[1:3], atol=1e-9)


def test_additivity(lq_run):
    P, ep = lq_run
    variations = [(0.7, Needle(1.0, (0.0, 0.0))), (1.5, Needle(0.0, (1.0, -1.0)))]
    eps = np.array([1e-2, 1e-2])
    assert additivity_remainder(P, ep, variations, eps) <= 0.1 * np.linalg.norm(eps)


# -- variation vectors ------------------------------------------------------------------------

def test_needle_at_reference_is_zero(candidate_run):
    P, ep = candidate_run
    V = variation_vector(P, ep, 1.0, needle_reference(ep, 1.0))
    assert np.all(V.hull.vertices == 0.0)
    assert V.v_nu == 0.0


def test_needle_vector_on_candidate(candidate_run):
    P, ep = candidate_run
    V = variation_vector(P, ep, 1.0, Needle(1.0, (0.0, 0.0)))
    assert np.allclose(V.hull.vertices[0], [0.5, 0.5, 0.0, -0.5, 0.0])
    assert V.v_nu == pytest.approx(-0.5)


@pytest.mark.parametrize("g1, lo, hi", [("abs(x2) - x2", 2.0, 4.0), ("x2 - abs(x2)", 0.0, 2.0)])
def test_bracket_vector_on_candidate(g1, lo, hi):
    P = sec5(g1)
    ep = solve_forward(P, CANDIDATE)
    V = variation_vector(P, ep, 1.0, Bracket(1, 2)).hull.vertices
    assert np.all(V[:, [0, 1, 2, 4]] == 0.0)
    assert (V[:, 3].min(), V[:, 3].max()) == (pytest.approx(lo), pytest.approx(hi))


# -- oracle -------------------------------------------------------------------------------------

def test_oracle_double_integrator_needle():
    P = lq_toy(("x2", "0"))
    ep = solve_forward(P, [Piece(2.0, 1.0, (0.0, 0.0))])
    rep = qdq_oracle(P, ep, [(0.9, Needle(1.0, (0.0, 0.0)))])
    assert rep["verdict"] == "PASS"
    assert rep["columns"][0]["distance"][-1] < 1e-5


def test_oracle_needle_converges_linearly(lq_run):
    P, ep = lq_run
    rep = qdq_oracle(P, ep, [(0.9, Needle(1.0, (0.0, 0.0))), (1.6, Needle(0.0, (1.0, -1.0)))])
    assert rep["verdict"] == "PASS"
    for col in rep["columns"]:
        d, eps = np.array(col["distance"]), np.array(col["eps"])
        assert col["observed_rate"] >= 0.9
        assert np.max(d / eps) < 1.0


def test_oracle_smooth_bracket():
    P = smooth_toy()
    ep = solve_forward(P, REST)
    rep = qdq_oracle(P, ep, [(0.9, Bracket(1, 2))])
    assert rep["verdict"] == "PASS"


def test_oracle_zero_variation(lq_run):
    P, ep = lq_run
    rep = qdq_oracle(P, ep, [(0.9, needle_reference(ep, 0.9))])
    col = rep["columns"][0]
    assert col["verdict"] == "PASS"
    # splitting the piece moves the RK4 grid, so round-off remains
    assert np.allclose(col["quotients"], 0.0, atol=NOISE_FLOOR)
    assert max(col["distance"]) < NOISE_FLOOR


def test_oracle_shifts_breakpoints(lq_run):
    P, ep = lq_run
    with pytest.warns(UserWarning, match="breakpoint"):
        rep = qdq_oracle(P, ep, [(1.2, Needle(1.0, (0.0, 0.0)))], eps_schedule=(1e-2, 1e-3))
    assert rep["columns"][0]["s"] < 1.2


def test_oracle_rejects_generator_outside_the_data(lq_run):
    P, ep = lq_run
    with pytest.raises(ValueError):
        qdq_oracle(P, ep, [(0.9, Needle(1.0, (0.0,)))])
