"""Nonsmooth higher-order maximum principle: brackets, variations and a certificate checker."""

from .checker import CheckConfig, CheckReport, run_full_check, search_multipliers
from .cones import Multicone, PolyhedralCone, is_transversal, linearly_separated, polar
from .expr import parse
from .field import NonsmoothField, jacobian_ae, sign_patterns
from .genjac import clarke_jacobian, covector_interval, goh_zero_membership, setvalued_bracket
from .hull import ConvexHullSet, Interval
from .integrate import solve_adjoint, solve_forward
from .problem import ExtendedProcess, Multipliers, Piece, SelectionPolicy, StrictProblem

__all__ = [
    "CheckConfig", "CheckReport", "ConvexHullSet", "ExtendedProcess", "Interval", "Multicone",
    "Multipliers", "NonsmoothField", "Piece", "PolyhedralCone", "SelectionPolicy", "StrictProblem",
    "clarke_jacobian", "covector_interval", "goh_zero_membership", "is_transversal", "jacobian_ae",
    "linearly_separated", "parse", "polar", "run_full_check", "search_multipliers",
    "setvalued_bracket", "sign_patterns", "solve_adjoint", "solve_forward",
]
