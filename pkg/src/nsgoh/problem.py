"""Strict and extended control problems, processes and multipliers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .cones import Multicone, PolyhedralCone
from .expr import (
    Const, Dims, Expr, _add, _mul, compile_function, diff, is_constant,
    const_value, parse, substitute, to_python, variables,
)
from .field import KINK_TOL, NonsmoothField, sign_patterns
from .hull import ConvexHullSet

RHO = 0.2
CANONICAL_TOL = 1e-9
RECESSION_RADII = tuple(10.0 ** -k for k in range(2, 9))
RECESSION_RTOL = 1e-6


class RecessionDivergence(ArithmeticError):
    pass


class ValidationError(ValueError):
    pass


def norm(w, kind: str = "euclidean") -> float:
    w = np.asarray(w, dtype=float)
    return float(np.sum(np.abs(w))) if kind == "l1" else float(np.linalg.norm(w))


# ---------------------------------------------------------------------------
# problem data

@dataclass
class StrictProblem:
    """Problem data; every function is an expression tree.

    ``f`` may use ``a1..aq``; ``l0`` uses ``x`` and ``a``; ``l1`` uses ``x``
    and ``u``; an explicit recession function uses ``x``, ``w0`` and ``w``;
    ``psi`` uses ``t`` and ``x``.
    """
    n: int
    m: int
    m1: int
    q: int
    f: NonsmoothField
    g: list[NonsmoothField]
    l0: Expr
    l1: Expr
    psi: Expr
    x0: np.ndarray
    K: float
    C: PolyhedralCone
    A_lo: np.ndarray
    A_hi: np.ndarray
    target: Multicone
    target_point: np.ndarray | None = None
    recession: Expr | None = None
    norm: str = "euclidean"
    rho: float = RHO
    name: str = "problem"

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.A_lo = np.asarray(self.A_lo, dtype=float).reshape(self.q)
        self.A_hi = np.asarray(self.A_hi, dtype=float).reshape(self.q)
        if self.target_point is not None:
            self.target_point = np.asarray(self.target_point, dtype=float)
        self.validate()

    @classmethod
    def from_strings(cls, *, n: int, m: int, f: Sequence[str], g: Sequence[Sequence[str]],
                     psi: str, x0, K: float = math.inf, m1: int | None = None, q: int = 0,
                     l0: str = "0", l1: str = "0", recession: str | None = None,
                     C: PolyhedralCone | None = None, A_lo=(), A_hi=(),
                     target: Multicone | None = None, target_point=None,
                     norm: str = "euclidean", rho: float = RHO, name: str = "problem"):
        dims = Dims(n, m, q)
        coords = tuple(f"x{i + 1}" for i in range(n))
        fF = NonsmoothField([parse(t, dims) for t in f], coords, name="f")
        gF = [NonsmoothField([parse(t, dims) for t in gi], coords, name=f"g{i + 1}")
              for i, gi in enumerate(g)]
        if C is None:
            C = PolyhedralCone.orthant([0] * m)
        if target is None:
            target = Multicone([PolyhedralCone.orthant([0] * (n + 1))])
        rec = parse(recession, Dims(n, m, q, allow_w=True)) if recession is not None else None
        return cls(n=n, m=m, m1=m if m1 is None else m1, q=q, f=fF, g=gF,
                   l0=parse(l0, dims), l1=parse(l1, dims), psi=parse(psi, dims),
                   x0=np.asarray(x0, float), K=float(K), C=C, A_lo=np.asarray(A_lo, float),
                   A_hi=np.asarray(A_hi, float), target=target, target_point=target_point,
                   recession=rec, norm=norm, rho=rho, name=name)

    def validate(self):
        if not self.K > 0:
            raise ValidationError("K must be positive")
        if self.x0.shape != (self.n,) or not np.all(np.isfinite(self.x0)):
            raise ValidationError(f"initial state must be {self.n} finite numbers")
        if self.f.dim_out != self.n or len(self.g) != self.m:
            raise ValidationError("drift must have n components and there must be m fields g_i")
        if any(gi.dim_out != self.n for gi in self.g):
            raise ValidationError("every g_i needs n components")
        if not 0 <= self.m1 <= self.m:
            raise ValidationError("m1 must lie in [0, m]")
        if self.C.dim != self.m:
            raise ValidationError("control cone dimension must equal m")
        eye = np.eye(self.m)
        for i in range(self.m1):
            if not (self.C.contains(eye[i]) and self.C.contains(-eye[i])):
                raise ValidationError(f"control cone must contain the axis e{i + 1}")
        if np.any(self.A_lo > self.A_hi):
            raise ValidationError("empty control box")
        if self.target.dim != self.n + 1:
            raise ValidationError("target cones live in (t, x) space of dimension n+1")
        if self.norm not in ("euclidean", "l1"):
            raise ValidationError(f"unknown norm {self.norm!r}")
        if not 0 < self.rho < 1:
            raise ValidationError("rho must lie in (0, 1)")

    def with_fields(self, g: list[NonsmoothField], name: str) -> "StrictProblem":
        return replace(self, g=list(g), name=name)

    @property
    def coords(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.n))

    def wnorm(self, w) -> float:
        return norm(w, self.norm)

    @cached_property
    def psi_field(self) -> NonsmoothField:
        return NonsmoothField([self.psi], ("t",) + self.coords, name="psi")

    @cached_property
    def l0_field(self) -> NonsmoothField:
        return NonsmoothField([self.l0], self.coords, name="l0")

    @cached_property
    def l1_field(self) -> NonsmoothField:
        return NonsmoothField([self.l1], self.coords, name="l1")

    @cached_property
    def recession_field(self) -> NonsmoothField | None:
        if self.recession is None:
            return None
        return NonsmoothField([self.recession], self.coords, name="l1")

    @cached_property
    def l1_is_zero(self) -> bool:
        return is_constant(self.l1) and const_value(self.l1) == 0.0

    def cost(self, endpoint) -> float:
        """``Psi(y0, y) + yl`` for an extended endpoint ``(y0, y, yl, beta)``."""
        e = np.asarray(endpoint, dtype=float)
        return float(self.psi_field.value(e[: self.n + 1])[0] + e[self.n + 1])

    def contains_control(self, w, tol: float = 1e-9) -> bool:
        return self.C.contains(np.asarray(w, float), tol)

    def in_box(self, a, tol: float = 1e-12) -> bool:
        a = np.asarray(a, float)
        return bool(np.all(a >= self.A_lo - tol) and np.all(a <= self.A_hi + tol))


# ---------------------------------------------------------------------------
# controls and processes

@dataclass(frozen=True)
class Piece:
    """Constant extended control ``(w0, w, alpha, zeta)`` for ``duration``."""
    duration: float
    w0: float
    w: tuple[float, ...]
    alpha: tuple[float, ...] = ()
    zeta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(v) for v in self.w))
        object.__setattr__(self, "alpha", tuple(float(v) for v in self.alpha))
        if not self.duration > 0:
            raise ValidationError(f"piece duration must be positive, got {self.duration}")
        if self.w0 < 0:
            raise ValidationError("w0 must be nonnegative")

    def with_duration(self, d: float) -> "Piece":
        return replace(self, duration=float(d))

    def rates(self):
        c = 1.0 + self.zeta
        return self.w0 * c, np.asarray(self.w) * c


@dataclass(frozen=True)
class StrictPiece:
    duration: float
    u: tuple[float, ...]
    a: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "u", tuple(float(v) for v in self.u))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        if not self.duration > 0:
            raise ValidationError("piece duration must be positive")
        if not all(math.isfinite(v) for v in self.u):
            raise ValidationError("unbounded control on a piece")


@dataclass
class StrictProcess:
    pieces: list[StrictPiece]
    trajectory: "ExtendedProcess | None" = None

    @property
    def T(self) -> float:
        return float(sum(p.duration for p in self.pieces))


def breakpoints(pieces: Sequence[Piece]) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum([p.duration for p in pieces])])


@dataclass
class ExtendedProcess:
    """Piecewise-constant extended control plus integrated trajectory.

    ``samples[k]`` holds ``(s, Y, dY)`` for piece ``k``, where ``Y`` stacks
    ``(y0, y, yl, beta)`` along the rows.
    """
    pieces: list[Piece]
    n: int
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    norm: str = "euclidean"

    @property
    def S(self) -> float:
        return float(breakpoints(self.pieces)[-1])

    @property
    def breaks(self) -> np.ndarray:
        return breakpoints(self.pieces)

    @property
    def canonical(self) -> bool:
        return all(p.zeta == 0 and abs(p.w0 + norm(p.w, self.norm) - 1.0) <= CANONICAL_TOL
                   for p in self.pieces)

    def piece_index(self, s: float, side: str = "right") -> int:
        b = self.breaks
        if side == "right":
            k = int(np.searchsorted(b, s, side="right")) - 1
        else:
            k = int(np.searchsorted(b, s, side="left")) - 1
        return min(max(k, 0), len(self.pieces) - 1)

    def control_at(self, s: float, side: str = "right") -> Piece:
        return self.pieces[self.piece_index(s, side)]

    def state_at(self, s) -> np.ndarray:
        """Cubic Hermite interpolation of the stored samples."""
        if not self.samples:
            raise ValueError("process has no trajectory; integrate it first")
        scalar = np.ndim(s) == 0
        ss = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty((len(ss), self.samples[0][1].shape[1]))
        for idx, sv in enumerate(ss):
            ts, Y, dY = self.samples[self.piece_index(sv)]
            j = int(np.clip(np.searchsorted(ts, sv, side="right") - 1, 0, len(ts) - 2))
            h = ts[j + 1] - ts[j]
            t = (sv - ts[j]) / h
            h00 = 2 * t ** 3 - 3 * t ** 2 + 1
            h10 = t ** 3 - 2 * t ** 2 + t
            h01 = -2 * t ** 3 + 3 * t ** 2
            h11 = t ** 3 - t ** 2
            out[idx] = h00 * Y[j] + h10 * h * dY[j] + h01 * Y[j + 1] + h11 * h * dY[j + 1]
        return out[0] if scalar else out

    @property
    def endpoint(self) -> np.ndarray:
        return self.samples[-1][1][-1].copy()

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """All stored samples, concatenated (breakpoints appear twice)."""
        s = np.concatenate([t for t, _, _ in self.samples])
        Y = np.vstack([y for _, y, _ in self.samples])
        return s, Y

    def l1_norm(self) -> float:
        return float(sum(p.duration * norm(p.rates()[1], self.norm) for p in self.pieces))


# ---------------------------------------------------------------------------
# selection policies and multipliers

@dataclass(frozen=True)
class SelectionPolicy:
    """Sign used for an active kink: ``table["g1:x2"]`` or ``table["x2"]``.

    Values are ``-1``, ``+1`` or ``0`` (midpoint of the two one-sided
    Jacobians); missing entries fall back to ``default``.
    """
    table: tuple[tuple[str, float], ...] = ()
    default: float = 0.0

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, object] | None, default="midpoint"):
        def val(v):
            if v in ("midpoint", 0, 0.0):
                return 0.0
            if v in (1, -1, 1.0, -1.0, "+1", "-1"):
                return float(v)
            raise ValidationError(f"selection must be -1, +1 or 'midpoint', got {v!r}")
        items = tuple(sorted((str(k), val(v)) for k, v in (mapping or {}).items()))
        return cls(items, val(default))

    def sign(self, key: str) -> float:
        d = dict(self.table)
        if key in d:
            return d[key]
        arg = key.split(":", 1)[1] if ":" in key else key
        return d.get(arg, self.default)

    def to_json(self) -> dict:
        out = {k: ("midpoint" if v == 0 else int(v)) for k, v in self.table}
        out["default"] = "midpoint" if self.default == 0 else int(self.default)
        return out


@dataclass
class Multipliers:
    p0: float
    lam: float
    pi: float
    p_expr: tuple[Expr, ...] | None = None
    p_path: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    policy: SelectionPolicy = SelectionPolicy()

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.pi > 0:
            raise ValidationError("pi must be nonpositive")
        if (self.p_expr is None) == (self.p_path is None):
            raise ValidationError("give p either as expressions in s or as a sampled path")

    @classmethod
    def from_strings(cls, p0, lam, pi, p: Sequence[str], n: int, policy=None):
        dims = Dims(n)
        exprs = tuple(parse(t, dims) for t in p)
        for e in exprs:
            if variables(e) - {"s"}:
                raise ValidationError("adjoint expressions may only use s")
        if len(exprs) != n:
            raise ValidationError(f"p needs {n} components")
        return cls(float(p0), float(lam), float(pi), p_expr=exprs,
                   policy=policy or SelectionPolicy())

    @cached_property
    def _p_fn(self):
        body = ", ".join(to_python(e, {"s": "s"}) for e in self.p_expr) + ","
        return compile_function("s", f"({body})")

    @cached_property
    def _dp_fn(self):
        body = ", ".join(to_python(diff(e, "s"), {"s": "s"}) for e in self.p_expr) + ","
        return compile_function("s", f"({body})")

    def p(self, s) -> np.ndarray:
        if self.p_expr is not None:
            s_arr = np.asarray(s, dtype=float)
            vals = self._p_fn(s_arr)
            return np.stack([np.broadcast_to(np.asarray(v, float), s_arr.shape) for v in vals], axis=-1)
        ts, P, _ = self.p_path
        s_arr = np.asarray(s, dtype=float)
        return np.stack([np.interp(s_arr, ts, P[:, i]) for i in range(P.shape[1])], axis=-1)

    def dp(self, s) -> np.ndarray:
        if self.p_expr is not None:
            s_arr = np.asarray(s, dtype=float)
            vals = self._dp_fn(s_arr)
            return np.stack([np.broadcast_to(np.asarray(v, float), s_arr.shape) for v in vals], axis=-1)
        ts, _, dP = self.p_path
        s_arr = np.asarray(s, dtype=float)
        return np.stack([np.interp(s_arr, ts, dP[:, i]) for i in range(dP.shape[1])], axis=-1)

    def scaled(self, c: float) -> "Multipliers":
        if not c > 0:
            raise ValueError("scaling factor must be positive")
        if self.p_expr is not None:
            pe = tuple(_mul(Const(c), e) for e in self.p_expr)
            return Multipliers(c * self.p0, c * self.lam, c * self.pi, p_expr=pe, policy=self.policy)
        ts, P, dP = self.p_path
        return Multipliers(c * self.p0, c * self.lam, c * self.pi, p_path=(ts, c * P, c * dP),
                           policy=self.policy)

    def describe_p(self) -> list[str] | None:
        from .expr import to_text
        return None if self.p_expr is None else [to_text(e) for e in self.p_expr]


# ---------------------------------------------------------------------------
# recession function, extended dynamics, Hamiltonian

def _aitken(seq: np.ndarray) -> np.ndarray:
    a, b, c = seq[-3], seq[-2], seq[-1]
    den = c - 2 * b + a
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = c - (c - b) ** 2 / den
    return np.where(np.abs(den) > 1e-300, acc, c)


def _limit(fn, label: str):
    """``lim_{r -> 0+} fn(r)`` over the radii schedule, with a convergence check."""
    vals = np.array([np.asarray(fn(r), dtype=float) for r in RECESSION_RADII])
    diffs = np.abs(np.diff(vals, axis=0))
    scale = np.maximum(1.0, np.abs(vals[-1]))
    if not np.all(np.isfinite(vals)) or np.any(diffs[-1] > RECESSION_RTOL * scale):
        raise RecessionDivergence(f"recession limit of {label} does not converge")
    est = _aitken(vals)
    if np.any(np.abs(est - vals[-1]) > 10 * RECESSION_RTOL * scale):
        return vals[-1]
    return est


def recession_l1(P: StrictProblem, x, w0: float, w) -> float:
    """``lim_{r -> w0} r l1(x, w / r)``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if P.recession_field is not None:
        return float(P.recession_field.value(x, {"w0": w0, "w": w})[0])
    if P.l1_is_zero:
        return 0.0
    if w0 > 0:
        return float(w0 * P.l1_field.value(x, {"u": w / w0})[0])
    if not np.any(w):
        return float(_limit(lambda r: r * P.l1_field.value(x, {"u": w})[0], "l1"))
    return float(_limit(lambda r: r * P.l1_field.value(x, {"u": w / r})[0], "l1"))


def recession_gradient(P: StrictProblem, x, w0: float, w, signs=None) -> np.ndarray:
    """``d/dx`` of the recession function (classical, or under ``signs``)."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if P.recession_field is not None:
        F, env = P.recession_field, {"w0": w0, "w": w}
        sg = np.sign(F.kink_values(x, env)) if signs is None else signs
        return F.jacobian(x, sg, env)[0]
    if P.l1_is_zero:
        return np.zeros(P.n)
    F = P.l1_field

    def grad(u, scale):
        env = {"u": u}
        sg = np.sign(F.kink_values(x, env)) if signs is None else signs
        return scale * F.jacobian(x, sg, env)[0]

    if w0 > 0:
        return grad(w / w0, w0)
    return _limit(lambda r: grad(w / r, r), "d l1/dx")


def extended_lagrangian(P: StrictProblem, y, w0: float, w, a) -> float:
    l0 = float(P.l0_field.value(np.asarray(y, float), {"a": np.asarray(a, float)})[0])
    return l0 * w0 + recession_l1(P, y, w0, w)


def extended_dynamics(P: StrictProblem, y, w0: float, w, a) -> tuple[float, np.ndarray, float, float]:
    """``(dy0, dy, dyl, dbeta)`` of the extended system."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    F = P.f.value(y, {"a": a}) * w0
    for wi, gi in zip(w, P.g):
        if wi:
            F = F + wi * gi.value(y)
    return float(w0), F, extended_lagrangian(P, y, w0, w, a), P.wnorm(w)


def hamiltonian(P: StrictProblem, y, p0: float, p, lam: float, pi: float, w0: float, w, a) -> float:
    _, F, le, nw = extended_dynamics(P, y, w0, w, a)
    return float(p0 * w0 + np.dot(p, F) - lam * le + pi * nw)


# ---------------------------------------------------------------------------
# per-piece compiled system

class PieceSystem:
    """Extended dynamics with one piece's control values frozen in."""

    def __init__(self, P: StrictProblem, piece: Piece):
        self.P = P
        self.piece = piece
        self.w0, self.w = piece.rates()
        self.alpha = np.asarray(piece.alpha, float)
        self.env = {"a": self.alpha, "w0": self.w0, "w": self.w}
        if self.w0 > 0:
            self.env["u"] = self.w / self.w0

    @cached_property
    def joint(self) -> NonsmoothField:
        """All fields stacked under one kink group (shared signs)."""
        comps = list(self.P.f.components)
        for gi in self.P.g:
            comps.extend(gi.components)
        comps.append(self.P.l0)
        lag = self._lagrangian_expr()
        comps.append(lag if lag is not None else Const(0.0))
        return NonsmoothField(comps, self.P.coords, groups=("joint",) * len(comps), name="joint")

    @cached_property
    def labelled(self) -> NonsmoothField:
        """The same stack with one kink group per field, for policy lookups."""
        groups = ["f"] * self.P.n
        for i in range(self.P.m):
            groups += [f"g{i + 1}"] * self.P.n
        groups += ["l0", "l1"]
        return NonsmoothField(self.joint.components, self.P.coords, groups=groups, name="labelled")

    def _lagrangian_expr(self) -> Expr | None:
        """``l1`` term as an expression in x, when it is symbolic."""
        P = self.P
        if P.recession is not None:
            return P.recession
        if P.l1_is_zero:
            return Const(0.0)
        if self.w0 > 0:
            return P.l1  # uses env u; scaled by w0 in the weights
        return None

    @cached_property
    def weights(self) -> np.ndarray:
        """Row vector mapping the stacked components to (F^e, l^e)."""
        n, m = self.P.n, self.P.m
        W = np.zeros((n + 1, n * (m + 1) + 2))
        eye = np.eye(n)
        W[:n, :n] = self.w0 * eye
        for i in range(m):
            W[:n, n * (i + 1): n * (i + 2)] = self.w[i] * eye
        W[n, n * (m + 1)] = self.w0
        l1_scale = self.w0 if (self.P.recession is None and not self.P.l1_is_zero) else 1.0
        W[n, n * (m + 1) + 1] = l1_scale
        return W

    @property
    def symbolic_lagrangian(self) -> bool:
        return self._lagrangian_expr() is not None

    @cached_property
    def rhs(self):
        """Fast scalar right-hand side ``Y -> dY`` for RK4."""
        P = self.P
        names = {f"x{i + 1}": f"Y[{i + 1}]" for i in range(P.n)}
        names["t"] = "Y[0]"
        consts = {f"a{k + 1}": Const(float(v)) for k, v in enumerate(self.alpha)}
        comps = []
        for i in range(P.n):
            e = _mul(Const(self.w0), substitute(P.f.components[i], consts)) if self.w0 else Const(0.0)
            for wi, gi in zip(self.w, P.g):
                if wi:
                    e = _add(e, _mul(Const(float(wi)), gi.components[i]))
            comps.append(e)
        lag = _mul(Const(self.w0), substitute(P.l0, consts)) if self.w0 else Const(0.0)
        extra = {}
        rec = self._lagrangian_expr()
        if rec is not None and not P.l1_is_zero:
            wsub = {"w0": Const(self.w0)}
            wsub.update({f"w{k + 1}": Const(float(v)) for k, v in enumerate(self.w)})
            if self.w0 > 0 and P.recession is None:
                wsub.update({f"u{k + 1}": Const(float(v / self.w0)) for k, v in enumerate(self.w)})
                rec_e = _mul(Const(self.w0), substitute(rec, wsub))
            else:
                rec_e = substitute(rec, wsub)
            body_l = to_python(_add(lag, rec_e), names)
        elif rec is None:
            extra["_lhat"] = lambda Y: recession_l1(P, Y[1:P.n + 1], self.w0, self.w)
            body_l = f"({to_python(lag, names)} + _lhat(Y))"
        else:
            body_l = to_python(lag, names)
        body = ", ".join([repr(float(self.w0))] + [to_python(c, names) for c in comps]
                         + [body_l, repr(P.wnorm(self.w))])
        return compile_function("Y", f"({body})", extra)

    def kink_values(self, x) -> np.ndarray:
        return self.labelled.kink_values(np.asarray(x, dtype=float), self.env)

    def _signs(self, x, policy: SelectionPolicy | None, kappa: float, hint=None):
        L = self.labelled
        kv = L.kink_values(x, self.env)
        sg = np.sign(kv)
        if len(L.kinks):
            active = np.abs(kv) <= kappa
            if hint is not None:
                # a kink crossed at an isolated point takes its one-sided limit
                usable = active & (np.abs(hint) > kappa)
                sg = np.where(usable, np.sign(hint), sg)
                active = active & ~usable
            if policy is not None and np.any(active):
                pol = np.array([policy.sign(k.key) for k in L.kinks], dtype=float)
                pol = pol.reshape((-1,) + (1,) * (sg.ndim - 1))
                sg = np.where(active, pol, sg)
        return sg

    def jacobians(self, x, policy: SelectionPolicy | None = None,
                  kappa: float = KINK_TOL, hint=None) -> tuple[np.ndarray, np.ndarray]:
        """Selected ``(M, omega)``: ``dF^e/dy`` (n, n, ...) and ``dl^e/dy`` (n, ...).

        Active kinks take the sign of ``hint`` (kink values at a nearby
        point) when that is unambiguous, and the policy otherwise.
        """
        x = np.asarray(x, dtype=float)
        L = self.labelled
        J = L.jacobian(x, self._signs(x, policy, kappa, hint), self.env)
        if not self.symbolic_lagrangian:
            extra = np.array([recession_gradient(self.P, xi, self.w0, self.w)
                              for xi in np.atleast_2d(x.T)])
            J = J.copy()
            J[-1] = extra.T if x.ndim > 1 else extra[0]
        comb = np.tensordot(self.weights, J, axes=([1], [0]))
        return comb[: self.P.n], comb[self.P.n]

    def clarke_rows(self, x, kappa: float = KINK_TOL, radius: float = 1e-3) -> list[np.ndarray]:
        """``(n+1, n)`` Jacobians of ``(F^e, l^e)`` over the joint sign patterns."""
        pats = sign_patterns(self.joint, np.asarray(x, float), radius=radius, env=self.env, kappa=kappa)
        out = []
        for _, J in pats:
            if not self.symbolic_lagrangian:
                J = J.copy()
                J[-1] = recession_gradient(self.P, x, self.w0, self.w, np.sign(
                    self.P.l1_field.kink_values(np.asarray(x, float), {"u": self.w})))
            out.append(self.weights @ J)
        return out

    def hamiltonian_gradient_hull(self, x, p, lam: float, kappa: float = KINK_TOL) -> ConvexHullSet:
        """Clarke gradient in ``x`` of ``p.F^e - lam l^e`` (the other terms are x-free)."""
        n = self.P.n
        vecs = [np.asarray(p) @ R[:n] - lam * R[n] for R in self.clarke_rows(x, kappa)]
        return ConvexHullSet(np.array(vecs), (n,), {"method": "enumeration"})


# ---------------------------------------------------------------------------
# reparametrizations

def schedule_from_strict(pieces: Sequence[StrictPiece], rate="uniform",
                         norm_kind: str = "euclidean") -> list[Piece]:
    """Extended schedule of a strict control under ``dt/ds = w0``."""
    out = []
    for k, sp in enumerate(pieces):
        u = np.asarray(sp.u)
        nu = norm(u, norm_kind)
        if not math.isfinite(nu):
            raise ValidationError("unbounded control on a piece")
        if rate == "uniform":
            w0 = 1.0 / (1.0 + nu)
        else:
            w0 = float(rate[k] if isinstance(rate, (list, tuple, np.ndarray)) else rate)
            if not w0 > 0:
                raise ValidationError("the rate dt/ds must be positive")
        out.append(Piece(sp.duration / w0, w0, tuple(u * w0), sp.a))
    return out


def reparametrize(pieces: Sequence[Piece], knots: Sequence[float], slopes: Sequence[float]) -> list[Piece]:
    """Equivalent schedule under a piecewise-linear ``sigma`` (new time -> old).

    ``knots`` are the breakpoints of ``sigma`` in the old time, ``slopes``
    the values of ``dsigma/ds`` on the intervals between them.
    """
    knots = np.asarray(knots, float)
    S = float(breakpoints(pieces)[-1])
    if len(slopes) != len(knots) - 1 or abs(knots[0]) > 1e-15 or abs(knots[-1] - S) > 1e-12:
        raise ValueError("sigma must cover [0, S] with one slope per interval")
    if np.any(np.asarray(slopes) <= 0):
        raise ValueError("sigma must be increasing")
    cuts = np.unique(np.concatenate([breakpoints(pieces), knots]))
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a <= 1e-15:
            continue
        mid = 0.5 * (a + b)
        p = pieces[min(int(np.searchsorted(breakpoints(pieces), mid, side="right")) - 1, len(pieces) - 1)]
        c = float(slopes[min(int(np.searchsorted(knots, mid, side="right")) - 1, len(slopes) - 1)])
        out.append(Piece((b - a) / c, p.w0 * c, tuple(np.asarray(p.w) * c), p.alpha, p.zeta))
    return out


def canonical_schedule(pieces: Sequence[Piece], norm_kind: str = "euclidean") -> list[Piece]:
    out = []
    for p in pieces:
        w0, w = p.rates()
        c = w0 + norm(w, norm_kind)
        if not c > 0:
            raise ValidationError("w0 + |w| must be bounded away from zero")
        out.append(Piece(p.duration * c, w0 / c, tuple(w / c), p.alpha, 0.0))
    return out


def extend_process(P: StrictProblem, sp: StrictProcess, rate="uniform", step: float | None = None) -> ExtendedProcess:
    from .integrate import solve_forward
    return solve_forward(P, schedule_from_strict(sp.pieces, rate, P.norm), step=step)


def restrict_process(P: StrictProblem, ep: ExtendedProcess) -> StrictProcess:
    out = []
    for p in ep.pieces:
        w0, w = p.rates()
        if w0 <= 0:
            raise ValidationError("impulsive pieces (w0 = 0) have no strict-sense counterpart")
        out.append(StrictPiece(p.duration * w0, tuple(w / w0), p.alpha))
    return StrictProcess(out)


def simulate_strict(P: StrictProblem, sp: StrictProcess, step: float | None = None) -> StrictProcess:
    from .integrate import solve_forward
    ep = solve_forward(P, [Piece(q.duration, 1.0, q.u, q.a) for q in sp.pieces], step=step)
    return StrictProcess(sp.pieces, ep)


def canonicalize(P: StrictProblem, ep: ExtendedProcess, step: float | None = None) -> ExtendedProcess:
    if ep.canonical:
        return ep
    for p in ep.pieces:
        w0, w = p.rates()
        if not w0 + norm(w, ep.norm) > 0:
            raise ValidationError("essinf(w0 + |w|) must be positive")
    from .integrate import solve_forward
    return solve_forward(P, canonical_schedule(ep.pieces, ep.norm), step=step)
