"""Fixed-step integration of the extended system and of the adjoint inclusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .field import KINK_TOL
from .problem import (
    ExtendedProcess, Multipliers, Piece, PieceSystem, SelectionPolicy, StrictProblem,
)

BLOWUP = 1e12
REL_STEP = 1e-4
MAX_STEP = 1e-3


class BlowUp(ArithmeticError):
    pass


def _steps(length: float, step: float | None) -> int:
    h = min(REL_STEP * length, MAX_STEP) if step is None else min(step, length)
    return max(1, int(math.ceil(length / h - 1e-9)))


def _rk4_piece(rhs, Y0: list[float], length: float, nsteps: int):
    h = length / nsteps
    d = len(Y0)
    Ys = np.empty((nsteps + 1, d))
    dYs = np.empty((nsteps + 1, d))
    Y = list(Y0)
    k1 = rhs(Y)
    Ys[0], dYs[0] = Y, k1
    rng = range(d)
    for j in range(nsteps):
        Y2 = [Y[i] + 0.5 * h * k1[i] for i in rng]
        k2 = rhs(Y2)
        Y3 = [Y[i] + 0.5 * h * k2[i] for i in rng]
        k3 = rhs(Y3)
        Y4 = [Y[i] + h * k3[i] for i in rng]
        k4 = rhs(Y4)
        Y = [Y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in rng]
        if not all(abs(v) <= BLOWUP for v in Y):
            raise BlowUp(f"state exceeded {BLOWUP:g} at step {j + 1} of a piece")
        k1 = rhs(Y)
        Ys[j + 1], dYs[j + 1] = Y, k1
    return Ys, dYs


def solve_forward(P: StrictProblem, pieces: Sequence[Piece], y_init=None,
                  step: float | None = None) -> ExtendedProcess:
    """RK4 on each constant-control piece, restarting exactly at breakpoints.

    ``step`` caps the absolute step; by default the step is
    ``min(1e-4 * piece length, 1e-3)``.
    """
    pieces = list(pieces)
    if not pieces:
        raise ValueError("empty control schedule")
    if y_init is None:
        Y = [0.0] + [float(v) for v in P.x0] + [0.0, 0.0]
    else:
        Y = [float(v) for v in y_init]
        if len(Y) != P.n + 3:
            raise ValueError(f"initial extended state needs {P.n + 3} entries")
    for p in pieces:
        if len(p.w) != P.m or len(p.alpha) != P.q:
            raise ValueError("piece control dimensions do not match the problem")
    ep = ExtendedProcess(pieces, P.n, norm=P.norm)
    s0 = 0.0
    for p in pieces:
        sys_ = PieceSystem(P, p)
        ns = _steps(p.duration, step)
        Ys, dYs = _rk4_piece(sys_.rhs, Y, p.duration, ns)
        ts = s0 + np.linspace(0.0, p.duration, ns + 1)
        ep.samples.append((ts, Ys, dYs))
        Y = list(Ys[-1])
        s0 += p.duration
    return ep


def endpoint(P: StrictProblem, pieces: Sequence[Piece], step: float | None = None) -> np.ndarray:
    return solve_forward(P, pieces, step=step).endpoint


# ---------------------------------------------------------------------------
# linear transport

def fundamental_matrix(M, s1: float, s2: float, step: float | None = None) -> np.ndarray:
    """``V(s2)`` for ``V' = M(s) V``, ``V(s1) = I``; ``M`` is a matrix or a callable."""
    Mf: Callable = M if callable(M) else (lambda s, _M=np.asarray(M, float): _M)
    d = np.asarray(Mf(s1)).shape[0]
    V = np.eye(d)
    length = s2 - s1
    if length == 0:
        return V
    ns = _steps(abs(length), step)
    h = length / ns
    s = s1
    for _ in range(ns):
        k1 = Mf(s) @ V
        Mm = Mf(s + 0.5 * h)
        k2 = Mm @ (V + 0.5 * h * k1)
        k3 = Mm @ (V + 0.5 * h * k2)
        k4 = Mf(s + h) @ (V + h * k3)
        V = V + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return V


def _hermite_mid(Ys, dYs, h):
    return 0.5 * (Ys[:-1] + Ys[1:]) + h / 8.0 * (dYs[:-1] - dYs[1:])


@dataclass
class StepMatrices:
    """Selections ``(M, omega)`` for each RK4 step of one piece.

    ``L``, ``C`` and ``R`` hold the values at the left node, the midpoint
    and the right node of every step; node values use the one-sided limit
    from inside the step when a kink is crossed there.
    """
    ts: np.ndarray
    ML: np.ndarray
    MC: np.ndarray
    MR: np.ndarray
    wL: np.ndarray
    wC: np.ndarray
    wR: np.ndarray


def selected_matrices(P: StrictProblem, ep: ExtendedProcess, policy: SelectionPolicy,
                      kappa: float = KINK_TOL) -> list[StepMatrices]:
    out = []
    n = P.n
    for p, (ts, Ys, dYs) in zip(ep.pieces, ep.samples):
        sys_ = PieceSystem(P, p)
        h = ts[1] - ts[0]
        xL = Ys[:-1, 1:n + 1].T
        xR = Ys[1:, 1:n + 1].T
        xC = _hermite_mid(Ys, dYs, h)[:, 1:n + 1].T
        hint = sys_.kink_values(xC)
        ML, wL = sys_.jacobians(xL, policy, kappa, hint)
        MC, wC = sys_.jacobians(xC, policy, kappa)
        MR, wR = sys_.jacobians(xR, policy, kappa, hint)

        def mats(M):
            return np.moveaxis(M, -1, 0)

        out.append(StepMatrices(ts, mats(ML), mats(MC), mats(MR), wL.T, wC.T, wR.T))
    return out


def augmented_transport(P: StrictProblem, ep: ExtendedProcess, s_from: float,
                        policy: SelectionPolicy, kappa: float = KINK_TOL) -> np.ndarray:
    """Fundamental matrix from ``s_from`` to ``S`` of ``(v, vl)' = ([M, 0], [omega, 0]) (v, vl)``."""
    n = P.n

    def A(M, w):
        out = np.zeros((n + 1, n + 1))
        out[:n, :n] = M
        out[n, :n] = w
        return out

    V = np.eye(n + 1)
    for sm in selected_matrices(P, ep, policy, kappa):
        ts = sm.ts
        if ts[-1] <= s_from:
            continue
        h = ts[1] - ts[0]
        for j in range(len(ts) - 1):
            a, b = ts[j], ts[j + 1]
            if b <= s_from:
                continue
            if a < s_from:
                # partial first step, with the step's midpoint data frozen
                V = fundamental_matrix(A(sm.MC[j], sm.wC[j]), 0.0, b - s_from, step=b - s_from) @ V
                continue
            A1, A2, A4 = A(sm.ML[j], sm.wL[j]), A(sm.MC[j], sm.wC[j]), A(sm.MR[j], sm.wR[j])
            k1 = A1 @ V
            k2 = A2 @ (V + 0.5 * h * k1)
            k3 = A2 @ (V + 0.5 * h * k2)
            k4 = A4 @ (V + h * k3)
            V = V + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return V


# ---------------------------------------------------------------------------
# adjoint

@dataclass
class AdjointResidual:
    s: np.ndarray
    distance: np.ndarray

    @property
    def max(self) -> float:
        return float(self.distance.max()) if len(self.distance) else 0.0

    @property
    def argmax(self) -> float:
        return float(self.s[int(np.argmax(self.distance))]) if len(self.distance) else 0.0


def solve_adjoint(P: StrictProblem, ep: ExtendedProcess, p0: float, p_terminal, lam: float,
                  pi: float = 0.0, policy: SelectionPolicy | None = None,
                  kappa: float = KINK_TOL, residual_points: int = 200,
                  matrices: list[StepMatrices] | None = None):
    """Backward RK4 for ``p' = -p M(s) + lam omega(s)`` from ``p(S)``.

    Returns the multipliers (sampled path) and the distance of ``-p'`` to
    the Clarke gradient of ``H`` at ``residual_points`` cell midpoints.
    ``matrices`` reuses the output of :func:`selected_matrices` for ``policy``.
    """
    if lam < 0 or pi > 0:
        raise ValueError("need lambda >= 0 and pi <= 0")
    policy = policy or SelectionPolicy()
    pT = np.asarray(p_terminal, dtype=float)
    if pT.shape != (P.n,) or not np.all(np.isfinite(pT)):
        raise ValueError(f"terminal costate must be {P.n} finite numbers")
    sel = matrices if matrices is not None else selected_matrices(P, ep, policy, kappa)
    ts, Ps, dPs = backward_adjoint(sel, pT[None, :], np.array([lam], float))
    Ps, dPs = Ps[:, 0], dPs[:, 0]
    mult = Multipliers(p0, lam, pi, p_path=(ts, Ps, dPs), policy=policy)
    return mult, adjoint_residual(P, ep, mult, residual_points, kappa)


def backward_adjoint(sel: list[StepMatrices], p_terminal: np.ndarray, lam: np.ndarray):
    """Batched backward RK4: row ``k`` of ``p_terminal`` is paired with ``lam[k]``.

    Returns ``ts`` and arrays of shape (len(ts), batch, n) for ``p`` and ``p'``;
    duplicated breakpoint samples are dropped, keeping the right-hand one.
    """
    p = np.array(p_terminal, dtype=float)
    lam = np.asarray(lam, float)[:, None]
    ts_all, ps_all, dps_all = [], [], []
    for sm in reversed(sel):
        ts = sm.ts
        h = ts[1] - ts[0]
        N = len(ts)
        Ps = np.empty((N,) + p.shape)
        dPs = np.empty((N,) + p.shape)
        Ps[-1] = p
        dPs[-1] = -p @ sm.MR[-1] + lam * sm.wR[-1]
        for j in range(N - 2, -1, -1):
            k1 = -p @ sm.MR[j] + lam * sm.wR[j]
            q = p - 0.5 * h * k1
            k2 = -q @ sm.MC[j] + lam * sm.wC[j]
            q = p - 0.5 * h * k2
            k3 = -q @ sm.MC[j] + lam * sm.wC[j]
            q = p - h * k3
            k4 = -q @ sm.ML[j] + lam * sm.wL[j]
            p = p - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            Ps[j] = p
            dPs[j] = -p @ sm.ML[j] + lam * sm.wL[j]
        ts_all.append(ts)
        ps_all.append(Ps)
        dps_all.append(dPs)
    ts = np.concatenate(ts_all[::-1])
    Ps = np.concatenate(ps_all[::-1])
    dPs = np.concatenate(dps_all[::-1])
    keep = np.concatenate([np.diff(ts) > 0, [True]])
    return ts[keep], Ps[keep], dPs[keep]


def midpoint_grid(S: float, N: int) -> np.ndarray:
    return (np.arange(N) + 0.5) * S / N


def adjoint_residual(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                     N: int = 200, kappa: float = KINK_TOL) -> AdjointResidual:
    grid = midpoint_grid(ep.S, N)
    dist = np.empty(N)
    for k, s in enumerate(grid):
        sys_ = PieceSystem(P, ep.control_at(s))
        x = ep.state_at(s)[1:P.n + 1]
        hull = sys_.hamiltonian_gradient_hull(x, mult.p(s), mult.lam, kappa)
        dist[k] = hull.distance(-mult.dp(s))
    return AdjointResidual(grid, dist)


def verify_adjoint_membership(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                              grid: int = 200, kappa: float = KINK_TOL) -> tuple[float, float]:
    """Max over the grid of ``dist(-dp/ds, Clarke gradient of H)`` and where it occurs."""
    r = adjoint_residual(P, ep, mult, grid, kappa)
    return r.max, r.argmax
