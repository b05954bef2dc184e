"""Needle and bracket-like control variations and a difference-quotient oracle."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .genjac import setvalued_bracket
from .hull import ConvexHullSet
from .integrate import MAX_STEP, REL_STEP, augmented_transport, solve_forward
from .problem import (
    ExtendedProcess, Piece, PieceSystem, SelectionPolicy, StrictProblem, breakpoints,
    extended_dynamics, norm,
)

TOL_QDQ = 1e-4
DEFAULT_EPS = (1e-2, 1e-3, 1e-4)
MAX_POLICIES = 2 ** 8
# distances below this are round-off in the quotient and count as zero
NOISE_FLOOR = 1e-7


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class Needle:
    w0: float
    w: tuple[float, ...]
    alpha: tuple[float, ...] = ()
    zeta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        if self.w0 < 0:
            raise ValueError("needle w0 must be nonnegative")

    def window(self, eps: float) -> float:
        return eps


@dataclass(frozen=True)
class Bracket:
    i: int
    j: int

    def __post_init__(self):
        if self.i == self.j or min(self.i, self.j) < 1:
            raise ValueError("bracket indices must be distinct and 1-based")

    def window(self, eps: float) -> float:
        return 8.0 * math.sqrt(eps)


def check_generator(P: StrictProblem, c) -> None:
    if isinstance(c, Bracket):
        if max(c.i, c.j) > P.m1:
            raise ValueError(f"bracket indices must lie in 1..m1 = {P.m1}")
    else:
        if len(c.w) != P.m or len(c.alpha) != P.q:
            raise ValueError("needle control dimensions do not match the problem")
        if not P.contains_control(c.w):
            raise ValueError("needle control w must lie in the control cone")
        if not P.in_box(c.alpha):
            raise ValueError("needle alpha must lie in the control box")
        if abs(c.zeta) > P.rho:
            raise ValueError("needle zeta must lie in [-rho, rho]")


# ---------------------------------------------------------------------------
# schedule surgery

def _cut(pieces: Sequence[Piece], a: float, b: float):
    """Split the schedule into the parts before ``a``, inside ``[a, b]`` and after ``b``."""
    before, inside, after = [], [], []
    s = 0.0
    for p in pieces:
        lo, hi = s, s + p.duration
        s = hi
        for part, (x, y) in ((before, (lo, min(hi, a))), (inside, (max(lo, a), min(hi, b))),
                             (after, (max(lo, b), hi))):
            if y - x > 1e-15:
                part.append(p.with_duration(y - x))
    return before, inside, after


def _lebesgue(pieces: Sequence[Piece], s_bar: float) -> float:
    b = breakpoints(pieces)
    k = int(np.argmin(np.abs(b - s_bar)))
    if 0 < k and abs(b[k] - s_bar) <= 1e-12:
        left = pieces[k - 1]
        cell = min(REL_STEP * left.duration, MAX_STEP)
        warnings.warn(f"variation point {s_bar} is a breakpoint; shifted left by {cell:g}",
                      stacklevel=3)
        return s_bar - cell
    return s_bar


def apply_needle(pieces: Sequence[Piece], s_bar: float, c: Needle, eps: float) -> list[Piece]:
    if eps == 0:
        return list(pieces)
    if not 0 < eps < s_bar:
        raise WindowError(f"needle needs 0 < eps < s_bar (eps={eps}, s_bar={s_bar})")
    before, _, after = _cut(pieces, s_bar - eps, s_bar)
    return before + [Piece(eps, c.w0, c.w, c.alpha, c.zeta)] + after


def apply_bracket(pieces: Sequence[Piece], s_bar: float, c: Bracket, eps: float,
                  alpha: Sequence[float] | None = None) -> list[Piece]:
    """Six-segment bracket variation on ``[s_bar - 8 sqrt(eps), s_bar]``."""
    if eps == 0:
        return list(pieces)
    r = math.sqrt(eps)
    if not 0 < 8 * r <= s_bar:
        raise WindowError(f"bracket variation needs 8*sqrt(eps) <= s_bar (eps={eps}, s_bar={s_bar})")
    before, inside, after = _cut(pieces, s_bar - 8 * r, s_bar)
    m = len(pieces[0].w)
    # original control on the window, run at double speed
    doubled = [Piece(p.duration / 2, 2 * p.w0, tuple(2 * v for v in p.w), p.alpha, p.zeta)
               for p in inside]
    a = tuple(inside[-1].alpha if alpha is None else alpha)
    eye = np.eye(m)
    legs = [Piece(r, 0.0, tuple(sg * eye[k - 1]), a, 0.0)
            for sg, k in ((1, c.i), (1, c.j), (-1, c.i), (-1, c.j))]
    return before + doubled + legs + after


def apply_variation(pieces, s_bar, c, eps):
    if isinstance(c, Bracket):
        return apply_bracket(pieces, s_bar, c, eps)
    return apply_needle(pieces, s_bar, c, eps)


# ---------------------------------------------------------------------------
# variation vectors and transport

@dataclass
class VariationVector:
    hull: ConvexHullSet          # (v0, v, vl)
    v_nu: float | None = None

    def to_json(self) -> dict:
        out = {"vertices": [np.round(v, 12).tolist() for v in self.hull.vertices]}
        if self.v_nu is not None:
            out["v_nu"] = self.v_nu
        return out


def variation_vector(P: StrictProblem, ep: ExtendedProcess, s_bar: float, c,
                     method: str = "enumeration", seed: int = 0) -> VariationVector:
    n = P.n
    y = ep.state_at(s_bar)[1:n + 1]
    if isinstance(c, Bracket):
        B = setvalued_bracket(P.g[c.i - 1], P.g[c.j - 1], y, method, seed=seed)
        V = np.zeros((len(B), n + 2))
        V[:, 1:n + 1] = B.vertices
        return VariationVector(ConvexHullSet(V, (n + 2,), B.meta))
    ref = ep.control_at(s_bar, side="left")
    w0r, wr = ref.rates()
    _, Fr, lr, nr = extended_dynamics(P, y, w0r, wr, ref.alpha)
    k = 1.0 + c.zeta
    _, Fc, lc, nc = extended_dynamics(P, y, c.w0, c.w, c.alpha)
    v = np.concatenate([[c.w0 * k - w0r], Fc * k - Fr, [lc * k - lr]])
    return VariationVector(ConvexHullSet(v[None, :], (n + 2,)), float(nc * k - nr))


def policy_tables(P: StrictProblem, ep: ExtendedProcess, cap: int = MAX_POLICIES) -> list[SelectionPolicy]:
    """All +-1 selections of the kinks that are active somewhere along ``ep``."""
    keys = set()
    for p, (ts, Ys, _) in zip(ep.pieces, ep.samples):
        L = PieceSystem(P, p).labelled
        kv = L.kink_values(Ys[:, 1:P.n + 1].T, PieceSystem(P, p).env)
        for k, row in zip(L.kinks, np.atleast_2d(kv)):
            if np.any(np.abs(row) <= 1e-9):
                keys.add(k.key)
    keys = sorted(keys)
    if 2 ** len(keys) > cap:
        raise RuntimeError(f"{2 ** len(keys)} selection tables exceed the cap {cap}")
    if not keys:
        return [SelectionPolicy()]
    return [SelectionPolicy.from_mapping(dict(zip(keys, sg)))
            for sg in itertools.product((-1, 1), repeat=len(keys))]


def transport(P: StrictProblem, ep: ExtendedProcess, s_k: float, V: VariationVector,
              policies: Sequence[SelectionPolicy] | None = None) -> ConvexHullSet:
    """Hull of ``(V0, Phi v, vl + int omega Phi v)`` over the given selections."""
    n = P.n
    policies = list(policies) if policies is not None else [SelectionPolicy()]
    out = []
    for pol in policies:
        T = augmented_transport(P, ep, s_k, pol)
        for v in V.hull.vertices:
            tv = T @ v[1:]
            out.append(np.concatenate([[v[0]], tv]))
    return ConvexHullSet(np.array(out), (n + 2,))


# ---------------------------------------------------------------------------
# endpoint map and oracle

def _windows(variations, eps):
    wins = []
    for (s, c), e in zip(variations, eps):
        if e:
            wins.append((s - c.window(e), s))
    wins.sort()
    for (a0, b0), (a1, b1) in zip(wins, wins[1:]):
        if a1 < b0 - 1e-15:
            raise WindowError(f"variation windows [{a0}, {b0}] and [{a1}, {b1}] overlap")
    return wins


def endpoint_map(P: StrictProblem, ep: ExtendedProcess, variations, eps,
                 step: float | None = None) -> np.ndarray:
    """Endpoint ``(y0, y, yl, beta)(S)`` after applying every variation."""
    eps = np.asarray(eps, dtype=float)
    if len(eps) != len(variations):
        raise ValueError("one parameter per variation")
    if np.any(eps < 0):
        raise ValueError("variation parameters must be nonnegative")
    _windows(variations, eps)
    pieces = list(ep.pieces)
    for (s, c), e in zip(variations, eps):
        pieces = apply_variation(pieces, s, c, e)
    return solve_forward(P, pieces, step=step).endpoint


def _rate(eps, dist):
    e = np.asarray(eps, float)
    d = np.asarray(dist, float)
    ok = d > NOISE_FLOOR
    if ok.sum() < 2:
        return None
    return float(np.polyfit(np.log(e[ok]), np.log(d[ok]), 1)[0])


def qdq_oracle(P: StrictProblem, ep: ExtendedProcess, variations, eps_schedule=DEFAULT_EPS,
               tol: float = TOL_QDQ, step: float | None = None,
               policies: Sequence[SelectionPolicy] | None = None,
               method: str = "enumeration") -> dict:
    """Difference quotients ``(Y(eps e_k) - Y(0)) / eps`` against the transported hull."""
    eps_schedule = [float(e) for e in eps_schedule]
    variations = [(float(_lebesgue(ep.pieces, s)), c) for s, c in variations]
    for _, c in variations:
        check_generator(P, c)
    base = endpoint_map(P, ep, variations, np.zeros(len(variations)), step=step)
    rows = []
    for k, (s, c) in enumerate(variations):
        V = variation_vector(P, ep, s, c, method=method)
        target = transport(P, ep, s, V, policies)
        quotients, dists = [], []
        for e in eps_schedule:
            vec = np.zeros(len(variations))
            vec[k] = e
            q = (endpoint_map(P, ep, variations, vec, step=step) - base) / e
            quotients.append(q[: P.n + 2])
            dists.append(target.distance(q[: P.n + 2]))
        d = np.array(dists)
        floored = np.maximum(d, NOISE_FLOOR)
        decreasing = bool(np.all(np.diff(floored) <= 1e-9 * floored[:-1]))
        passed = bool(d[-1] < tol and (decreasing or d.max() < tol))
        rows.append({
            "index": k,
            "s": s,
            "generator": _describe(c),
            "eps": eps_schedule,
            "quotients": [np.round(q, 12).tolist() for q in quotients],
            "distance": d.tolist(),
            "decreasing": decreasing,
            "observed_rate": _rate(eps_schedule, d),
            "target": target.to_json()["vertices"],
            "verdict": "PASS" if passed else "FAIL",
        })
    return {"tol": tol, "columns": rows,
            "verdict": "PASS" if all(r["verdict"] == "PASS" for r in rows) else "FAIL"}


def _describe(c) -> dict:
    if isinstance(c, Bracket):
        return {"bracket": [c.i, c.j]}
    return {"needle": {"w0": c.w0, "w": list(c.w), "alpha": list(c.alpha), "zeta": c.zeta}}


def additivity_remainder(P: StrictProblem, ep: ExtendedProcess, variations, eps,
                         step: float | None = None) -> float:
    """``|Y(eps) - Y(0) - sum_k (Y(eps_k e_k) - Y(0))|``."""
    eps = np.asarray(eps, float)
    base = endpoint_map(P, ep, variations, np.zeros_like(eps), step=step)
    joint = endpoint_map(P, ep, variations, eps, step=step) - base
    parts = np.zeros_like(joint)
    for k in range(len(eps)):
        vec = np.zeros_like(eps)
        vec[k] = eps[k]
        parts += endpoint_map(P, ep, variations, vec, step=step) - base
    return float(np.linalg.norm(joint - parts))


def needle_reference(ep: ExtendedProcess, s_bar: float) -> Needle:
    """The needle that reproduces the reference control at ``s_bar``."""
    p = ep.control_at(s_bar, side="left")
    return Needle(p.w0, p.w, p.alpha, p.zeta)


__all__ = [
    "Bracket", "Needle", "VariationVector", "WindowError", "additivity_remainder",
    "apply_bracket", "apply_needle", "apply_variation", "endpoint_map", "needle_reference",
    "policy_tables", "qdq_oracle", "transport", "variation_vector", "norm",
]
