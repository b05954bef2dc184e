import math

import numpy as np
import pytest

from nsgoh import io
from nsgoh.cones import Multicone, PolyhedralCone
from nsgoh.integrate import solve_forward
from nsgoh.problem import Piece, StrictProblem

R2 = math.sqrt(2) / 2
CANDIDATE = [Piece(2.0, 0.5, (-0.5, 0.0))]
IMPULSIVE = CANDIDATE + [Piece(R2, 0.0, w) for w in ((0, 1), (1, 0), (0, -1), (-1, 0))]


def sec5(g1: str = "x2 - abs(x2)", cone=(-1, 0, 0, -1), point=(1, 0, 0, 1)) -> StrictProblem:
    return StrictProblem.from_strings(
        n=3, m=2, f=["0", "0", "-1"], g=[["1", "0", g1], ["0", "1", "x1 + abs(x1)"]],
        psi="x1^2 + x2^2 + x3^2 + (t - 1)^2", x0=[1, 0, 2], K=4,
        target=Multicone([PolyhedralCone.orthant(cone)]), target_point=point)


@pytest.fixture(scope="session")
def printed():
    return io.load_problem(io.example_path("problem-as-printed.toml"))


@pytest.fixture(scope="session")
def variant():
    return io.load_problem(io.example_path("problem-paper-variant.toml"))


@pytest.fixture(scope="session")
def candidate_run():
    P = sec5()
    return P, solve_forward(P, CANDIDATE)


@pytest.fixture(scope="session")
def variant_run():
    P = sec5("abs(x2) - x2")
    return P, solve_forward(P, CANDIDATE)


@pytest.fixture(scope="session")
def impulsive_run():
    P = sec5(cone=(-1, 0, 0, 1), point=(1, 0, 0, 0))
    return P, solve_forward(P, IMPULSIVE)


def smooth_toy(drift=("0", "0")) -> StrictProblem:
    """g = (1, 0), h = (0, x1) on R^2."""
    return StrictProblem.from_strings(n=2, m=2, f=list(drift), g=[["1", "0"], ["0", "x1"]],
                                      psi="x1^2 + x2^2", x0=[0, 0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
