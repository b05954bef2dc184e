"""Polyhedral cones and multicones.

A cone is stored by generators; a generator flagged as a line spans both
of its directions.  Polars are computed with the double-description
method and all membership questions are small linear programs.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

ZERO_TOL = 1e-9
MAX_STRONG_COMBINATIONS = 4096


def _normalize(v):
    return v / np.max(np.abs(v)) + 0.0


class PolyhedralCone:
    def __init__(self, generators, lines: Sequence[bool] | None = None, dim: int | None = None):
        gens = np.asarray(generators, dtype=float)
        if gens.size == 0:
            if dim is None:
                raise ValueError("the zero cone needs an explicit dimension")
            gens = np.zeros((0, dim))
        if gens.ndim != 2:
            raise ValueError("generators must be a list of vectors")
        self.dim = gens.shape[1] if dim is None else dim
        if gens.shape[1] != self.dim:
            raise ValueError("generator length differs from the cone dimension")
        if len(gens) and np.any(np.max(np.abs(gens), axis=1) == 0):
            raise ValueError("zero generator")
        self.generators = gens
        self.lines = np.zeros(len(gens), bool) if lines is None else np.asarray(lines, bool)
        if self.lines.shape != (len(gens),):
            raise ValueError("one line flag per generator")

    @classmethod
    def zero(cls, dim: int) -> "PolyhedralCone":
        return cls([], dim=dim)

    @classmethod
    def orthant(cls, signs: Sequence[int]) -> "PolyhedralCone":
        """Product of half-lines (sign ±1) and full lines (sign 0)."""
        d = len(signs)
        eye = np.eye(d)
        gens = [eye[i] * (s if s else 1) for i, s in enumerate(signs)]
        return cls(gens, [s == 0 for s in signs], dim=d)

    def __repr__(self):
        return f"PolyhedralCone(dim={self.dim}, generators={self.generators.tolist()}, lines={self.lines.tolist()})"

    @property
    def rays(self) -> np.ndarray:
        """Conic generators with every line split into its two directions."""
        return np.vstack([self.generators, -self.generators[self.lines]]) if len(self.generators) \
            else np.zeros((0, self.dim))

    def __neg__(self) -> "PolyhedralCone":
        return PolyhedralCone(-self.generators, self.lines, self.dim)

    def contains(self, v, tol: float = ZERO_TOL) -> bool:
        v = np.asarray(v, dtype=float)
        if np.max(np.abs(v), initial=0.0) <= tol:
            return True
        R = self.rays
        if len(R) == 0:
            return False
        res = linprog(np.zeros(len(R)), A_eq=R.T, b_eq=v, bounds=[(0, None)] * len(R), method="highs")
        if res.status != 0:
            return False
        return float(np.max(np.abs(R.T @ res.x - v))) <= tol * max(1.0, float(np.max(np.abs(v))))

    def contains_cone(self, other: "PolyhedralCone", tol: float = ZERO_TOL) -> bool:
        return all(self.contains(r, tol) for r in other.rays)

    def equals(self, other: "PolyhedralCone", tol: float = ZERO_TOL) -> bool:
        return self.contains_cone(other, tol) and other.contains_cone(self, tol)

    def is_zero(self) -> bool:
        return len(self.generators) == 0

    def to_json(self) -> dict:
        return {"generators": self.generators.tolist(), "lines": self.lines.tolist()}


def _double_description(A: np.ndarray, dim: int):
    """Extreme rays and lineality basis of ``{x : A x <= 0}``."""
    lin = [row for row in np.eye(dim)]
    rays: list[np.ndarray] = []
    zsets: list[set[int]] = []
    for k, a in enumerate(A):
        vals = [float(a @ l) for l in lin]
        piv = next((i for i, v in enumerate(vals) if abs(v) > ZERO_TOL), None)
        if piv is not None:
            l0, v0 = lin[piv], vals[piv]
            lin = [_normalize(l - (v / v0) * l0) for i, (l, v) in enumerate(zip(lin, vals)) if i != piv]
            new_rays = [r - (float(a @ r) / v0) * l0 for r in rays]
            rays = [_normalize(r) for r in new_rays]
            zsets = [z | {k} for z in zsets]
            rays.append(_normalize(-np.sign(v0) * l0))
            # the pivot ray is tight on every earlier constraint
            zsets.append(set(range(k)))
            continue
        s = [float(a @ r) for r in rays]
        pos = [i for i, v in enumerate(s) if v > ZERO_TOL]
        neg = [i for i, v in enumerate(s) if v < -ZERO_TOL]
        zero = [i for i, v in enumerate(s) if abs(v) <= ZERO_TOL]
        new_rays = [rays[i] for i in neg + zero]
        new_z = [zsets[i] | ({k} if i in zero else set()) for i in neg + zero]
        for i in pos:
            for j in neg:
                common = zsets[i] & zsets[j]
                if any(common <= zsets[t] for t in range(len(rays)) if t not in (i, j)):
                    continue
                r = s[i] * rays[j] - s[j] * rays[i]
                if np.max(np.abs(r)) <= ZERO_TOL:
                    continue
                new_rays.append(_normalize(r))
                new_z.append(common | {k})
        rays, zsets = new_rays, new_z
    return rays, lin


def polar(C: PolyhedralCone) -> PolyhedralCone:
    """``{mu : mu . c <= 0 for every c in C}``."""
    rays, lin = _double_description(C.rays, C.dim)
    gens = [r for r in rays] + [l for l in lin]
    flags = [False] * len(rays) + [True] * len(lin)
    if not gens:
        return PolyhedralCone.zero(C.dim)
    return PolyhedralCone(np.array(gens), flags, C.dim)


def _check_dims(C1, C2):
    if C1.dim != C2.dim:
        raise ValueError(f"cone dimensions differ: {C1.dim} vs {C2.dim}")


def is_transversal(C1: PolyhedralCone, C2: PolyhedralCone) -> bool:
    """True iff ``C1 - C2`` is the whole space."""
    _check_dims(C1, C2)
    R = np.vstack([C1.rays, -C2.rays])
    if len(R) == 0:
        return False
    D = PolyhedralCone(R, dim=C1.dim)
    eye = np.eye(C1.dim)
    return all(D.contains(e) and D.contains(-e) for e in eye)


def linearly_separated(C1: PolyhedralCone, C2: PolyhedralCone) -> np.ndarray | None:
    """Nonzero ``mu`` with ``mu.C1 >= 0`` and ``mu.C2 <= 0``, or ``None``.

    The separating forms are ``-polar(C1 - C2)``; the returned form is the
    normalized sum of its extreme rays (or a lineality direction).
    """
    _check_dims(C1, C2)
    R = np.vstack([C1.rays, -C2.rays])
    P = polar(PolyhedralCone(R, dim=C1.dim)) if len(R) else PolyhedralCone.orthant([0] * C1.dim)
    if P.is_zero():
        return None
    pointed = P.generators[~P.lines]
    nu = pointed.sum(axis=0) if len(pointed) else P.generators[0]
    if np.max(np.abs(nu)) <= ZERO_TOL:
        nu = P.generators[0]
    mu = -nu
    return mu / np.sum(np.abs(mu))


def intersection(C1: PolyhedralCone, C2: PolyhedralCone) -> PolyhedralCone:
    """``C1 ∩ C2 = polar(polar(C1) + polar(C2))`` for closed cones."""
    _check_dims(C1, C2)
    R = np.vstack([polar(C1).rays, polar(C2).rays])
    if len(R) == 0:
        return PolyhedralCone.orthant([0] * C1.dim)
    return polar(PolyhedralCone(R, dim=C1.dim))


class Multicone:
    def __init__(self, cones: Sequence[PolyhedralCone]):
        cones = list(cones)
        if not cones:
            raise ValueError("a multicone needs at least one cone")
        if len({c.dim for c in cones}) != 1:
            raise ValueError("all cones of a multicone share the ambient dimension")
        self.cones = cones
        self.dim = cones[0].dim

    def __iter__(self):
        return iter(self.cones)

    def __len__(self):
        return len(self.cones)

    def to_json(self) -> list:
        return [c.to_json() for c in self.cones]


def _as_multicone(C) -> Multicone:
    return C if isinstance(C, Multicone) else Multicone([C])


def is_strongly_transversal(M1, M2) -> bool:
    """All pairs transversal, and one form positive on each pairwise intersection."""
    M1, M2 = _as_multicone(M1), _as_multicone(M2)
    pairs = list(itertools.product(M1, M2))
    if not all(is_transversal(a, b) for a, b in pairs):
        return False
    # a form is positive somewhere on a cone iff it is positive on one of its rays
    choices = []
    for a, b in pairs:
        inter = intersection(a, b)
        if inter.is_zero():
            return False
        choices.append(inter.rays)
    total = int(np.prod([len(c) for c in choices]))
    if total > MAX_STRONG_COMBINATIONS:
        raise RuntimeError(f"{total} ray combinations exceed the cap {MAX_STRONG_COMBINATIONS}")
    d = M1.dim
    for combo in itertools.product(*choices):
        G = np.array(combo)
        res = linprog(np.zeros(d), A_ub=-G, b_ub=-np.ones(len(G)),
                      bounds=[(None, None)] * d, method="highs")
        if res.status == 0 and np.all(G @ res.x >= 1 - 1e-7):
            return True
    return False
