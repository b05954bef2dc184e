"""Clarke generalized Jacobians and set-valued Lie brackets.

Three estimators are available.  ``enumeration`` evaluates the symbolic
Jacobian under every feasible sign pattern of the active kinks.
``sampling`` collects classical Jacobians at random points of shrinking
balls around ``x``.  ``mollified`` convolves the a.e. Jacobian with a
smooth bump of radius ``eps``; every such average lies in the hull of the
Jacobians near ``x``.
"""

from __future__ import annotations

import itertools
from typing import Mapping

import numpy as np

from .field import KINK_TOL, NonsmoothField, sign_patterns
from .hull import ConvexHullSet, Interval

METHODS = ("enumeration", "sampling", "mollified")

SAMPLING_R0 = 1e-3
SAMPLING_LEVELS = 7
SAMPLING_PER_RADIUS = 512
SAMPLING_MIN_ACCEPTED = 32
MOLLIFIER_EPS = (1e-3,)
MOLLIFIER_SAMPLES = 1024


class NoAcceptedSamples(RuntimeError):
    pass


def _ball(rng, count, dim):
    g = rng.standard_normal((count, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (rng.random(count) ** (1.0 / dim))[:, None]


def _bump_weights(z):
    r2 = np.einsum("ij,ij->i", z, z)
    w = np.zeros(len(z))
    inside = r2 < 1.0
    w[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return w / w.sum()


# -- generic estimators on an a.e.-defined quantity -----------------------------
#
# ``quantity(points (d, N), signs (K, N)) -> (..., N)`` evaluates the object
# whose limits we collect; ``kinks(points) -> (K, N)`` gives kink arguments.

def _sampled(quantity, kinks, x, kappa, seed, r0, levels, per_radius, min_accepted):
    d = x.size
    chosen = None
    for k in range(levels):
        radius = r0 * 2.0 ** (-k)
        rng = np.random.default_rng([seed, k])
        pts = (x[None, :] + radius * _ball(rng, per_radius, d)).T
        kv = kinks(pts)
        ok = np.all(np.abs(kv) >= 10 * kappa, axis=0) if len(kv) else np.ones(pts.shape[1], bool)
        if ok.sum() >= min_accepted:
            vals = quantity(pts[:, ok], np.sign(kv[:, ok]))
            chosen = (radius, int(ok.sum()), np.moveaxis(vals, -1, 0))
    if chosen is None:
        raise NoAcceptedSamples(f"no radius produced {min_accepted} kink-free samples at {x.tolist()}")
    return chosen


def _mollified(quantity, kinks, x, eps_schedule, seed, samples):
    d = x.size
    if d > 6:
        raise ValueError("mollified estimator supports at most 6 coordinates")
    rng = np.random.default_rng([seed, 977])
    z = _ball(rng, samples, d)
    w = _bump_weights(z)
    out = []
    for eps in eps_schedule:
        # centres at x and at the 3^d - 1 neighbours 2*eps away, so that the
        # one-sided limits are reached as well as the symmetric average
        for offset in itertools.product((-1.0, 0.0, 1.0), repeat=d):
            c = x + 2.0 * eps * np.array(offset)
            pts = (c[None, :] + eps * z).T
            vals = quantity(pts, np.sign(kinks(pts)))
            out.append(np.tensordot(vals, w, axes=([-1], [0])))
    return np.array(out)


# -- Clarke Jacobian --------------------------------------------------------------

def clarke_jacobian(F: NonsmoothField, x, method: str = "enumeration",
                    env: Mapping | None = None, kappa: float = KINK_TOL,
                    seed: int = 0, **params) -> ConvexHullSet:
    x = np.asarray(x, dtype=float)
    shape = (F.dim_out, F.dim_in)
    if method == "enumeration":
        pats = sign_patterns(F, x, radius=params.get("radius", 1e-3), env=env, kappa=kappa,
                             cap=params.get("cap", 16), seed=seed)
        return ConvexHullSet([J for _, J in pats], shape,
                             {"method": method, "patterns": len(pats)})

    def quantity(pts, signs):
        return F.jacobian(pts, signs, env)

    def kinks(pts):
        return F.kink_values(pts, env)

    if method == "sampling":
        radius, accepted, mats = _sampled(
            quantity, kinks, x, kappa, seed,
            params.get("r0", SAMPLING_R0), params.get("levels", SAMPLING_LEVELS),
            params.get("samples", SAMPLING_PER_RADIUS), params.get("min_accepted", SAMPLING_MIN_ACCEPTED))
        return ConvexHullSet(mats, shape, {"method": method, "radius": radius, "accepted": accepted})
    if method == "mollified":
        eps = tuple(params.get("eps", MOLLIFIER_EPS))
        mats = _mollified(quantity, kinks, x, eps, seed, params.get("samples", MOLLIFIER_SAMPLES))
        return ConvexHullSet(mats, shape, {"method": method, "eps": list(eps)})
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# -- set-valued bracket ---------------------------------------------------------------

def _joint(g: NonsmoothField, h: NonsmoothField) -> NonsmoothField:
    # both fields are evaluated at the same points, so a shared kink argument
    # must receive a single sign: one group for the stacked field
    if g.coords != h.coords:
        raise ValueError("fields must share coordinates")
    comps = g.components + h.components
    return NonsmoothField(comps, g.coords, groups=("bracket",) * len(comps), name="bracket")


def _bracket_raw(g, h, x, method, env, kappa, seed, params):
    n = g.dim_out
    if g.dim_out != g.dim_in or h.dim_out != h.dim_in or h.dim_out != n:
        raise ValueError("bracket needs two square fields of the same dimension")
    J = _joint(g, h)
    x = np.asarray(x, dtype=float)

    def quantity(pts, signs):
        val = J.value(pts, env)
        jac = J.jacobian(pts, signs, env)
        gv, hv = val[:n], val[n:]
        Dg, Dh = jac[:n], jac[n:]
        return np.einsum("ij...,j...->i...", Dh, gv) - np.einsum("ij...,j...->i...", Dg, hv)

    def kinks(pts):
        return J.kink_values(pts, env)

    if method == "enumeration":
        val = J.value(x, env)
        pats = sign_patterns(J, x, radius=params.get("radius", 1e-3), env=env, kappa=kappa,
                             cap=params.get("cap", 16), seed=seed)
        vecs = [jac[n:] @ val[:n] - jac[:n] @ val[n:] for _, jac in pats]
        return np.array(vecs), {"method": method, "patterns": len(pats)}
    if method == "sampling":
        radius, accepted, vecs = _sampled(
            quantity, kinks, x, kappa, seed,
            params.get("r0", SAMPLING_R0), params.get("levels", SAMPLING_LEVELS),
            params.get("samples", SAMPLING_PER_RADIUS), params.get("min_accepted", SAMPLING_MIN_ACCEPTED))
        return vecs, {"method": method, "radius": radius, "accepted": accepted}
    if method == "mollified":
        eps = tuple(params.get("eps", MOLLIFIER_EPS))
        vecs = _mollified(quantity, kinks, x, eps, seed, params.get("samples", MOLLIFIER_SAMPLES))
        return vecs, {"method": method, "eps": list(eps)}
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def setvalued_bracket(g: NonsmoothField, h: NonsmoothField, x, method: str = "enumeration",
                      env: Mapping | None = None, kappa: float = KINK_TOL,
                      seed: int = 0, **params) -> ConvexHullSet:
    """Hull of limits of ``Dh g - Dg h`` along joint differentiability points.

    The pair is put in a canonical order before evaluation and the result
    negated if needed, so that swapping ``g`` and ``h`` gives exactly the
    negated vertex list.
    """
    if g.key() > h.key():
        return -setvalued_bracket(h, g, x, method, env, kappa, seed, **params)
    vecs, meta = _bracket_raw(g, h, x, method, env, kappa, seed, params)
    return ConvexHullSet(vecs, (g.dim_out,), meta)


def classical_bracket(g: NonsmoothField, h: NonsmoothField, x, env: Mapping | None = None) -> np.ndarray:
    """``Dh g - Dg h`` at a point where both fields are differentiable."""
    x = np.asarray(x, dtype=float)
    Dg = g.jacobian(x, np.sign(g.kink_values(x, env)), env)
    Dh = h.jacobian(x, np.sign(h.kink_values(x, env)), env)
    return Dh @ g.value(x, env) - Dg @ h.value(x, env)


# -- covector projections -------------------------------------------------------------

def covector_interval(p, B: ConvexHullSet) -> Interval:
    p = np.asarray(p, dtype=float).reshape(-1)
    if B.shape != (p.size,):
        raise ValueError(f"covector of length {p.size} against vectors of shape {B.shape}")
    vals = B.flat @ p
    return Interval(float(vals.min()), float(vals.max()))


def goh_zero_membership(interval: Interval, tol: float = 1e-6) -> str:
    """``"holds"``, ``"marginal"`` or ``"fails"`` for the test ``0 in interval``.

    An interval that is ``{0}`` up to ``tol`` counts as holding; otherwise
    zero within ``tol`` of an endpoint is marginal.
    """
    lo, hi = interval.lo, interval.hi
    if lo - tol > 0 or hi + tol < 0:
        return "fails"
    if lo >= -tol and hi <= tol:
        return "holds"
    if min(abs(lo), abs(hi)) <= tol:
        return "marginal"
    return "holds"
