"""Lipschitz vector fields given by expression trees.

A :class:`NonsmoothField` is a list of expressions differentiated with
respect to an ordered tuple of coordinates.  All remaining variables
(controls, time, ...) are supplied through an environment mapping at call
time.  Kinks are the arguments of ``abs`` nodes; they are tracked per
*group* (a label attached to each component) so that two fields sharing a
kink argument can still receive independent sign selections.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .expr import (
    Dims, EvalError, Expr, Sign, compile_function, diff, kink_nodes, parse,
    to_python, to_text, variables, walk,
)

KINK_TOL = 1e-9
PATTERN_CAP = 16
PATTERN_SAMPLES = 64


class PatternCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Kink:
    group: str
    arg: Expr

    @property
    def key(self) -> str:
        return f"{self.group}:{to_text(self.arg)}"


@dataclass(frozen=True)
class KinkReport:
    """Returned by :func:`jacobian_ae` when ``x`` sits on a kink."""
    point: tuple
    kinks: tuple[str, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class SignPattern:
    signs: tuple[tuple[str, int], ...]
    radius: float

    def as_dict(self) -> dict[str, int]:
        return dict(self.signs)


def _source_name(var: str, coords: Sequence[str]) -> str:
    if var in coords:
        return f"x[{coords.index(var)}]"
    if var in ("t", "s", "w0"):
        return f"E[{var!r}]"
    mo = re.fullmatch(r"([xuaw])(\d+)", var)
    if mo is None:
        raise EvalError(f"unsupported variable {var!r}")
    return f"E[{mo.group(1)!r}][{int(mo.group(2)) - 1}]"


def _broadcast(values, like=None):
    if not like and all(isinstance(v, (float, int)) for v in values):
        # single point: every component is a plain scalar
        return np.array(values, dtype=float)
    arrays = [np.asarray(v, dtype=float) for v in values]
    shape = np.broadcast_shapes(*(a.shape for a in arrays)) if arrays else ()
    if like is not None:
        shape = np.broadcast_shapes(shape, like)
    return np.stack([np.broadcast_to(a, shape) for a in arrays]) if arrays else np.zeros((0,) + shape)


class NonsmoothField:
    """Vector of expressions differentiated with respect to ``coords``."""

    def __init__(self, components: Sequence[Expr], coords: Sequence[str],
                 groups: Sequence[str] | None = None, name: str = "F",
                 lipschitz: float | None = None):
        if lipschitz is not None and not lipschitz > 0:
            raise ValueError("Lipschitz bound must be positive")
        self.components = tuple(components)
        self.coords = tuple(coords)
        self.name = name
        self.groups = tuple(groups) if groups is not None else (name,) * len(self.components)
        if len(self.groups) != len(self.components):
            raise ValueError("one group label per component")
        self.lipschitz = lipschitz

    @classmethod
    def from_strings(cls, texts: Sequence[str], dims: Dims, name: str = "F", **kw):
        coords = kw.pop("coords", tuple(f"x{i + 1}" for i in range(dims.n)))
        return cls([parse(t, dims) for t in texts], coords, name=name, **kw)

    def __repr__(self):
        body = ", ".join(to_text(c) for c in self.components)
        return f"NonsmoothField({self.name}: ({body}) in {','.join(self.coords)})"

    @property
    def dim_out(self) -> int:
        return len(self.components)

    @property
    def dim_in(self) -> int:
        return len(self.coords)

    def key(self) -> str:
        return "|".join(to_text(c) for c in self.components) + "@" + ",".join(self.coords)

    # -- kinks and compiled kernels ------------------------------------------------

    @cached_property
    def kinks(self) -> tuple[Kink, ...]:
        seen: dict[Kink, None] = {}
        for comp, group in zip(self.components, self.groups):
            for arg in kink_nodes(comp):
                seen.setdefault(Kink(group, arg), None)
        return tuple(seen)

    def _names(self, exprs):
        names = {}
        for e in exprs:
            for v in variables(e):
                names[v] = _source_name(v, self.coords)
        return names

    @cached_property
    def derivatives(self) -> tuple[tuple[Expr, ...], ...]:
        return tuple(tuple(diff(c, v) for v in self.coords) for c in self.components)

    @cached_property
    def _value_fn(self):
        names = self._names(self.components)
        body = ", ".join(to_python(c, names) for c in self.components) + ","
        return compile_function("x, E", f"({body})")

    @cached_property
    def _kink_fn(self):
        args = [k.arg for k in self.kinks]
        names = self._names(args)
        body = ", ".join(to_python(a, names) for a in args) + ("," if args else "")
        return compile_function("x, E", f"({body})")

    @cached_property
    def _jac_fn(self):
        flat = [d for row in self.derivatives for d in row]
        names = self._names(flat)
        index = {k: i for i, k in enumerate(self.kinks)}
        parts = []
        for row, group in zip(self.derivatives, self.groups):
            signs = {k.arg: f"sg[{i}]" for k, i in index.items() if k.group == group}
            parts.extend(to_python(d, names, signs) for d in row)
        body = ", ".join(parts) + ("," if parts else "")
        return compile_function("x, E, sg", f"({body})")

    @cached_property
    def _kink_grad_fn(self):
        grads = [diff(k.arg, v) for k in self.kinks for v in self.coords]
        names = self._names(grads)
        body = ", ".join(to_python(g, names) for g in grads) + ("," if grads else "")
        return compile_function("x, E", f"({body})")

    @cached_property
    def kinks_affine(self) -> bool:
        for k in self.kinks:
            for v in self.coords:
                d = diff(k.arg, v)
                if variables(d) or any(isinstance(n, Sign) for n in walk(d)):
                    return False
        return True

    # -- evaluation ------------------------------------------------------------------

    @staticmethod
    def _env(env):
        return {} if env is None else env

    def value(self, x, env: Mapping | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="raise", invalid="raise"):
            try:
                out = self._value_fn(x, self._env(env))
            except (ZeroDivisionError, FloatingPointError) as exc:
                raise EvalError(str(exc)) from exc
        return _broadcast(out, x.shape[1:])

    def kink_values(self, x, env: Mapping | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _broadcast(self._kink_fn(x, self._env(env)), x.shape[1:])

    def jacobian(self, x, signs, env: Mapping | None = None) -> np.ndarray:
        """Symbolic Jacobian with explicit kink signs (one per kink)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="raise", invalid="raise"):
            try:
                flat = self._jac_fn(x, self._env(env), signs)
            except (ZeroDivisionError, FloatingPointError) as exc:
                raise EvalError(str(exc)) from exc
        out = _broadcast(flat, x.shape[1:])
        return out.reshape((self.dim_out, self.dim_in) + out.shape[1:])

    def kink_gradients(self, x, env: Mapping | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = _broadcast(self._kink_grad_fn(x, self._env(env)), x.shape[1:])
        return flat.reshape((len(self.kinks), self.dim_in) + flat.shape[1:])

    def stack(self, other: "NonsmoothField", name: str | None = None) -> "NonsmoothField":
        if self.coords != other.coords:
            raise ValueError("fields must share coordinates")
        return NonsmoothField(self.components + other.components, self.coords,
                              self.groups + other.groups, name or f"{self.name}+{other.name}")


# ---------------------------------------------------------------------------
# operations

def jacobian_ae(F: NonsmoothField, x, env: Mapping | None = None,
                kappa: float = KINK_TOL):
    """Classical Jacobian at ``x``, or a :class:`KinkReport` on a kink."""
    x = np.asarray(x, dtype=float)
    kv = F.kink_values(x, env)
    active = np.abs(kv) <= kappa
    if active.any():
        return KinkReport(tuple(x.tolist()),
                          tuple(k.key for k, a in zip(F.kinks, active) if a),
                          tuple(float(v) for v, a in zip(kv, active) if a))
    return F.jacobian(x, np.sign(kv), env)


def _ball(rng, center, radius, count):
    d = center.size
    g = rng.standard_normal((count, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / d)
    return center[None, :] + g * r[:, None]


def _linear_witness(F, x, env, active_idx, sigma, radius, kv):
    """Point in B(x, radius) realizing ``sigma`` for the linearized kinks."""
    grads = F.kink_gradients(x, env)[active_idx]
    b = kv[active_idx]
    d = F.dim_in
    half = radius / np.sqrt(d)
    # maximise t subject to sigma_k (b_k + a_k . dx) >= t, |dx_i| <= half
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A = np.hstack([-(sigma[:, None] * grads), np.ones((len(sigma), 1))])
    ub = sigma * b
    bounds = [(-half, half)] * d + [(None, 1.0)]
    res = linprog(c, A_ub=A, b_ub=ub, bounds=bounds, method="highs")
    if res.status != 0 or res.x[-1] <= 1e-14:
        return None
    return x + res.x[:d]


def sign_patterns(F: NonsmoothField, x, radius: float = 1e-3,
                  env: Mapping | None = None, kappa: float = KINK_TOL,
                  cap: int = PATTERN_CAP, samples: int = PATTERN_SAMPLES,
                  seed: int = 0) -> list[tuple[SignPattern, np.ndarray]]:
    """Limit Jacobians reachable from ``x``, one per feasible sign pattern.

    Feasibility of an assignment of signs to the kinks active at ``x`` is
    decided by uniform sampling in ``B(x, radius)`` and, failing that, by a
    linear program on the linearized kink arguments whose solution is then
    checked against the exact arguments.  For affine kink arguments the
    linear program is exact.
    """
    x = np.asarray(x, dtype=float)
    kv = F.kink_values(x, env)
    active_idx = np.flatnonzero(np.abs(kv) <= kappa)
    base = np.sign(kv)
    if len(active_idx) > cap:
        raise PatternCapExceeded(
            f"{len(active_idx)} kinks active at {x.tolist()} (cap {cap})")
    if len(active_idx) == 0:
        return [(SignPattern((), radius), F.jacobian(x, base, env))]

    keys = [F.kinks[i].key for i in active_idx]
    count = samples * 2 ** len(active_idx)
    rng = np.random.default_rng([seed, len(active_idx), count])
    pts = _ball(rng, x, radius, count)
    pkv = F.kink_values(pts.T, env)[active_idx]
    hit = np.all(pkv != 0, axis=0)
    realized = {tuple(int(v) for v in col) for col in np.sign(pkv[:, hit]).T}

    out = []
    for sigma in itertools.product((-1, 1), repeat=len(active_idx)):
        if sigma not in realized:
            sig = np.array(sigma, dtype=float)
            wit = _linear_witness(F, x, env, active_idx, sig, radius, kv)
            if wit is None:
                continue
            got = np.sign(F.kink_values(wit, env)[active_idx])
            if not np.array_equal(got, sig):
                continue
        signs = base.copy()
        signs[active_idx] = sigma
        out.append((SignPattern(tuple(zip(keys, sigma)), radius), F.jacobian(x, signs, env)))
    return out
