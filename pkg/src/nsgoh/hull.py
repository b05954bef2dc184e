"""Finite-vertex convex sets of vectors or matrices, and real intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

DEDUP_TOL = 1e-10


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi

    def scale(self, alpha: float) -> "Interval":
        a, b = alpha * self.lo, alpha * self.hi
        return Interval(min(a, b), max(a, b))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def hausdorff(self, other: "Interval") -> float:
        return max(abs(self.lo - other.lo), abs(self.hi - other.hi))

    def as_list(self) -> list[float]:
        return [float(self.lo), float(self.hi)]


def _dedup(points: np.ndarray, tol: float) -> np.ndarray:
    if len(points) > 64:
        _, idx = np.unique(np.round(points / tol), axis=0, return_index=True)
        points = points[np.sort(idx)]
    keep: list[np.ndarray] = []
    for p in points:
        if all(np.max(np.abs(p - q)) > tol for q in keep):
            keep.append(p)
    return np.array(keep)


def _in_hull_lp(point: np.ndarray, others: np.ndarray, tol: float) -> bool:
    k = len(others)
    A_eq = np.vstack([others.T, np.ones((1, k))])
    b_eq = np.concatenate([point, [1.0]])
    res = linprog(np.zeros(k), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * k, method="highs")
    if res.status != 0:
        return False
    return np.max(np.abs(others.T @ res.x - point)) <= 10 * tol


def extreme_points(points: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Drop duplicates and points lying in the hull of the remaining ones."""
    pts = _dedup(np.asarray(points, dtype=float), tol)
    if len(pts) <= 2:
        return pts
    centred = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    if rank == 0:
        return pts[:1]
    if rank == 1:
        t = centred @ vt[0]
        return pts[[int(np.argmin(t)), int(np.argmax(t))]]
    if len(pts) > rank + 1 and rank <= 6:
        # qhull prefilter in the affine hull, then the exact LP filter below
        try:
            pts = pts[np.sort(ConvexHull(centred @ vt[:rank].T).vertices)]
        except QhullError:
            pass
    keep = list(range(len(pts)))
    for i in range(len(pts)):
        others = [j for j in keep if j != i]
        if len(others) >= 2 and _in_hull_lp(pts[i], pts[others], tol):
            keep.remove(i)
    return pts[keep]


def min_norm_point(V: np.ndarray, tol: float = 1e-12, max_iter: int = 500) -> np.ndarray:
    """Wolfe's minimum-norm-point algorithm over the hull of the rows of ``V``."""
    V = np.asarray(V, dtype=float)
    if len(V) == 1:
        return V[0].copy()
    scale = max(1.0, float(np.max(np.abs(V))))
    i0 = int(np.argmin(np.einsum("ij,ij->i", V, V)))
    S = [i0]
    lam = np.array([1.0])
    x = V[i0].copy()
    for _ in range(max_iter):
        g = V @ x
        j = int(np.argmin(g))
        if x @ x - g[j] <= tol * scale ** 2 or j in S:
            break
        S.append(j)
        lam = np.append(lam, 0.0)
        while True:
            B = V[S]
            k = len(S)
            # affine minimizer over the current corral
            G = np.block([[B @ B.T, np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
            rhs = np.zeros(k + 1)
            rhs[-1] = 1.0
            mu = np.linalg.lstsq(G, rhs, rcond=None)[0][:k]
            if np.all(mu > tol):
                lam = mu
                x = mu @ B
                break
            neg = mu <= tol
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - mu), np.inf)
            theta = min(1.0, float(np.min(ratios)))
            lam = lam + theta * (mu - lam)
            drop = lam <= tol
            S = [s for s, d in zip(S, drop) if not d]
            lam = lam[~drop]
            lam = lam / lam.sum()
            x = lam @ V[S]
    return x


class ConvexHullSet:
    """Convex hull of finitely many vectors or matrices.

    Vertices are stored flattened; ``shape`` is the shape of a single
    element.  The constructor reduces the vertex list to extreme points.
    """

    def __init__(self, vertices, shape: tuple[int, ...] | None = None,
                 meta: dict | None = None, reduce: bool = True):
        arr = np.asarray(vertices, dtype=float)
        if arr.size == 0 or len(arr) == 0:
            raise ValueError("a hull needs at least one vertex")
        if shape is None:
            shape = arr.shape[1:]
        self.shape = tuple(shape)
        flat = arr.reshape(len(arr), -1)
        self.flat = extreme_points(flat) if reduce else flat
        self.meta = dict(meta or {})

    @property
    def vertices(self) -> np.ndarray:
        return self.flat.reshape((len(self.flat),) + self.shape)

    def __len__(self):
        return len(self.flat)

    def __neg__(self) -> "ConvexHullSet":
        return ConvexHullSet(0.0 - self.flat.reshape((len(self),) + self.shape), self.shape,
                             self.meta, reduce=False)

    def __repr__(self):
        return f"ConvexHullSet(shape={self.shape}, vertices={len(self)})"

    @property
    def is_singleton(self) -> bool:
        return len(self) == 1

    def diameter(self) -> float:
        diffs = self.flat[:, None, :] - self.flat[None, :, :]
        return float(np.max(np.linalg.norm(diffs, axis=-1)))

    def distance(self, point) -> float:
        p = np.asarray(point, dtype=float).reshape(-1)
        return float(np.linalg.norm(min_norm_point(self.flat - p)))

    def project(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float).reshape(-1)
        return (min_norm_point(self.flat - p) + p).reshape(self.shape)

    def contains(self, point, tol: float = 1e-9) -> bool:
        return self.distance(point) <= tol

    def hausdorff(self, other: "ConvexHullSet") -> float:
        # distance to a convex set is convex, so the sup is attained at a vertex
        a = max(other.distance(v) for v in self.flat)
        b = max(self.distance(v) for v in other.flat)
        return max(a, b)

    def image(self, fn) -> "ConvexHullSet":
        """Hull of ``fn`` applied to the vertices (exact for linear ``fn``)."""
        out = np.array([np.asarray(fn(v), dtype=float) for v in self.vertices])
        return ConvexHullSet(out, out.shape[1:], self.meta)

    def to_json(self) -> dict:
        return {"shape": list(self.shape),
                "vertices": [np.round(v, 12).tolist() for v in self.vertices],
                "meta": self.meta}
