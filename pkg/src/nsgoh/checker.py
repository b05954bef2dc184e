"""Certificate checks for a candidate extended process and its multipliers.

The five conditions are checked independently and aggregated into a
:class:`CheckReport`.  Condition iv) is evaluated on the slice
``w0 + |w| = 1``: the Hamiltonian is positively homogeneous of degree one
in ``(w0, w)``, so its supremum over the full cone is finite (and then
zero) exactly when it is nonpositive on the slice.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.stats import qmc

from .cones import Multicone, polar
from .genjac import clarke_jacobian, covector_interval, goh_zero_membership, setvalued_bracket
from .integrate import (
    adjoint_residual, backward_adjoint, midpoint_grid, selected_matrices, solve_adjoint,
)
from .problem import (
    ExtendedProcess, Multipliers, SelectionPolicy, StrictProblem, ValidationError,
    extended_dynamics, hamiltonian, norm, recession_l1,
)
from .variations import policy_tables

REPORT_VERSION = 1
# beta(S) within this of K counts as using the whole budget
BUDGET_TOL = 1e-9
CONDITIONS = ("i", "ii", "iii", "iv", "v")


class InfeasibleCandidate(ValueError):
    pass


class SearchCapExceeded(RuntimeError):
    pass


@dataclass
class CheckConfig:
    tol_triv: float = 1e-9
    tol_adj: float = 1e-6
    tol_tr: float = 1e-6
    tol_H: float = 1e-6
    tol_goh: float = 1e-6
    tol_meas: float = 0.01
    tol_endpoint: float = 1e-6
    grid: int = 200
    slice_samples: int = 200
    a_levels: int = 3
    method: str = "enumeration"
    seed: int = 0
    search_mesh: int = 12
    search_cap: int = 20000

    def to_json(self) -> dict:
        return asdict(self)


def verdict(residual: float, tol: float) -> str:
    if residual <= tol:
        return "PASS"
    if residual <= 10 * tol:
        return "MARGINAL"
    return "FAIL"


def _p_sup(mult: Multipliers, S: float, N: int = 401) -> float:
    s = np.linspace(0.0, S, N)
    return float(np.max(np.abs(mult.p(s))))


# ---------------------------------------------------------------------------
# i) nontriviality

def check_nontriviality(mult: Multipliers, S: float, tol: float = 1e-9) -> dict:
    size = abs(mult.p0) + _p_sup(mult, S) + mult.lam
    return {"verdict": "PASS" if size > tol else "FAIL", "size": size, "tol": tol}


# ---------------------------------------------------------------------------
# ii) adjoint inclusion

def check_adjoint(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                  cfg: CheckConfig) -> dict:
    r = adjoint_residual(P, ep, mult, cfg.grid)
    return {"verdict": verdict(r.max, cfg.tol_adj), "residual": r.max, "argmax_s": r.argmax,
            "tol": cfg.tol_adj, "grid": cfg.grid}


# ---------------------------------------------------------------------------
# iii) non-transversality

def endpoint_tx(P: StrictProblem, ep: ExtendedProcess) -> np.ndarray:
    return ep.endpoint[: P.n + 1]


def check_feasible(P: StrictProblem, ep: ExtendedProcess, tol: float = 1e-6) -> None:
    end = ep.endpoint
    if P.target_point is not None:
        gap = float(np.max(np.abs(end[: P.n + 1] - P.target_point)))
        if gap > tol:
            raise InfeasibleCandidate(
                f"endpoint {np.round(end[:P.n + 1], 9).tolist()} is {gap:.3g} away from the target point")
    if end[-1] > P.K + tol:
        raise InfeasibleCandidate(f"L1 budget exceeded: beta(S) = {end[-1]:.9g} > K = {P.K}")


def psi_hull(P: StrictProblem, point, method: str = "enumeration"):
    return clarke_jacobian(P.psi_field, point, method)


def _transversality_lp(target_vec, M, R, lam):
    """min |target + lam * sum th_i M_i + sum mu_k R_k|_1 over th in simplex, mu >= 0."""
    d = len(target_vec)
    nM, nR = len(M), len(R)
    nv = nM + nR + 2 * d
    c = np.concatenate([np.zeros(nM + nR), np.ones(2 * d)])
    # target + lam M^T th + R^T mu = e+ - e-
    A_eq = np.zeros((d + 1, nv))
    A_eq[:d, :nM] = lam * M.T
    if nR:
        A_eq[:d, nM:nM + nR] = R.T
    A_eq[:d, nM + nR:nM + nR + d] = -np.eye(d)
    A_eq[:d, nM + nR + d:] = np.eye(d)
    A_eq[d, :nM] = 1.0
    b_eq = np.concatenate([-target_vec, [1.0]])
    res = linprog(c, A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * nv, method="highs")
    if res.status != 0:
        return math.inf, None, None
    th = res.x[:nM]
    mu = res.x[nM:nM + nR]
    m = th @ M
    xi = mu @ R if nR else np.zeros(d)
    resid = float(np.linalg.norm(target_vec + lam * m + xi))
    return resid, m, xi


def check_transversality(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                         target: Multicone | None = None, cfg: CheckConfig | None = None) -> dict:
    """``(p0, p(S)) in -lam dPsi - polar(T)`` for some cone ``T`` of the multicone."""
    cfg = cfg or CheckConfig()
    target = target or P.target
    if len(target) == 0:
        raise ValidationError("empty target multicone")
    point = endpoint_tx(P, ep)
    M = psi_hull(P, point, cfg.method).flat
    vec = np.concatenate([[mult.p0], mult.p(ep.S)])
    best = None
    for k, T in enumerate(target):
        R = polar(T).rays
        resid, m, xi = _transversality_lp(vec, M, R, mult.lam)
        if best is None or resid < best[0]:
            best = (resid, k, m, xi)
    resid, k, m, xi = best
    out = {"verdict": verdict(resid, cfg.tol_tr), "residual": resid, "tol": cfg.tol_tr,
           "cone_index": k, "psi_vertices": np.round(M, 12).tolist()}
    if m is not None:
        out["witness"] = {"m": np.round(m, 12).tolist(), "xi": np.round(xi, 12).tolist()}
    return out


# ---------------------------------------------------------------------------
# iv) maximization on the slice

def slice_samples(P: StrictProblem, count: int = 200, seed: int = 0) -> np.ndarray:
    """Points ``(w0, w)`` with ``w0 + |w| = 1`` and ``w`` in the control cone."""
    rays = P.C.rays
    pts = [np.concatenate([[1.0], np.zeros(P.m)])]
    for r in rays:
        pts.append(np.concatenate([[0.0], r / norm(r, P.norm)]))
    if len(rays) and count:
        k = len(rays) + 1
        sob = qmc.Sobol(d=k, scramble=True, seed=seed)
        # draw a power-of-two batch to keep the balance properties, then truncate
        U = sob.random_base2(max(0, math.ceil(math.log2(count))))[:count]
        for u in U:
            d = u[:-1] @ rays
            nd = norm(d, P.norm)
            if nd <= 1e-12:
                continue
            t = u[-1]
            pts.append(np.concatenate([[1.0 - t], t * d / nd]))
    return np.array(pts)


def a_grid(P: StrictProblem, levels: int = 3) -> list[np.ndarray]:
    if P.q == 0:
        return [np.zeros(0)]
    axes = [np.linspace(lo, hi, levels) if hi > lo else np.array([lo])
            for lo, hi in zip(P.A_lo, P.A_hi)]
    return [np.array(a) for a in itertools.product(*axes)]


@dataclass
class HamiltonianTable:
    """Coefficients of ``H`` along an ``s`` grid.

    ``H`` is linear in ``(p0, p, lam)``, so each evaluation point stores the
    vector ``(w0, F^e, -l^e)`` and a multiplier is scored by dot products.
    """
    s: np.ndarray
    cand: np.ndarray      # (N, n + 2) at the candidate control
    slice: np.ndarray     # (N, K, n + 2) at the slice points
    args: list            # (w-row, a) for each of the K slice points

    @classmethod
    def build(cls, P: StrictProblem, ep: ExtendedProcess, s_grid, W, As) -> "HamiltonianTable":
        s_grid = np.asarray(s_grid, float)
        args = [(row, a) for a in As for row in W]
        cand = np.empty((len(s_grid), P.n + 2))
        sl = np.empty((len(s_grid), len(args), P.n + 2))

        def coef(y, w0, w, a):
            _, F, le, _ = extended_dynamics(P, y, w0, w, a)
            return np.concatenate([[w0], F, [-le]])

        W = np.asarray(W, float)
        for k, s in enumerate(s_grid):
            y = ep.state_at(s)[1:P.n + 1]
            piece = ep.control_at(s)
            w0, w = piece.rates()
            cand[k] = coef(y, w0, w, piece.alpha)
            # F^e is linear in (w0, w); only the recession term needs each row
            G = np.array([gi.value(y) for gi in P.g]).reshape(P.m, P.n)
            rec = np.array([recession_l1(P, y, row[0], row[1:]) for row in W])
            for ai, a in enumerate(As):
                fa = P.f.value(y, {"a": np.asarray(a, float)})
                l0 = float(P.l0_field.value(y, {"a": np.asarray(a, float)})[0])
                block = sl[k, ai * len(W):(ai + 1) * len(W)]
                block[:, 0] = W[:, 0]
                block[:, 1:P.n + 1] = np.outer(W[:, 0], fa) + W[:, 1:] @ G
                block[:, P.n + 1] = -(l0 * W[:, 0] + rec)
        return cls(s_grid, cand, sl, args)

    def values(self, p0: float, p: np.ndarray, lam: float):
        """Candidate ``H`` of shape (N,) and slice values of shape (N, K)."""
        mvec = np.concatenate([np.full((len(self.s), 1), p0), p, np.full((len(self.s), 1), lam)],
                              axis=1)
        return np.einsum("nd,nd->n", self.cand, mvec), np.einsum("nkd,nd->nk", self.slice, mvec)


    def gap(self, p0: float, p: np.ndarray, lam: float) -> float:
        """``max_s max(|H(candidate)|, max_slice H)`` for the given multipliers."""
        h_cand, h_slice = self.values(p0, p, lam)
        return float(np.max(np.maximum(np.abs(h_cand), h_slice.max(axis=1))))


def hamiltonian_table(P: StrictProblem, ep: ExtendedProcess, cfg: CheckConfig,
                      grid: Sequence[float] | None = None) -> HamiltonianTable:
    s_grid = midpoint_grid(ep.S, cfg.grid) if grid is None else np.asarray(grid, float)
    return HamiltonianTable.build(P, ep, s_grid, slice_samples(P, cfg.slice_samples, cfg.seed),
                                  a_grid(P, cfg.a_levels))


def _slice_max(P, y, p0, p, lam, W, As):
    best, arg = -math.inf, None
    for a in As:
        for row in W:
            h = hamiltonian(P, y, p0, p, lam, 0.0, row[0], row[1:], a)
            if h > best:
                best, arg = h, (row, a)
    return best, arg


def check_hamiltonian_max(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                          cfg: CheckConfig | None = None, grid: Sequence[float] | None = None) -> dict:
    cfg = cfg or CheckConfig()
    s_grid = midpoint_grid(ep.S, cfg.grid) if grid is None else np.asarray(grid, float)
    W = slice_samples(P, cfg.slice_samples, cfg.seed)
    As = a_grid(P, cfg.a_levels)
    worst_gap, worst = -math.inf, None
    worst_cand = 0.0
    for s in s_grid:
        y = ep.state_at(s)[1:P.n + 1]
        piece = ep.control_at(s)
        w0, w = piece.rates()
        p = mult.p(s)
        h_cand = hamiltonian(P, y, mult.p0, p, mult.lam, 0.0, w0, w, piece.alpha)
        h_max, arg = _slice_max(P, y, mult.p0, p, mult.lam, W, As)
        gap = max(abs(h_cand), h_max)
        worst_cand = max(worst_cand, abs(h_cand))
        if gap > worst_gap:
            worst_gap = gap
            worst = {"s": float(s), "slice_max": float(h_max), "candidate_H": float(h_cand),
                     "argmax_w0": float(arg[0][0]), "argmax_w": np.round(arg[0][1:], 12).tolist(),
                     "argmax_a": np.round(arg[1], 12).tolist()}
    return {"verdict": verdict(worst_gap, cfg.tol_H), "residual": float(worst_gap),
            "max_abs_candidate_H": float(worst_cand), "worst": worst, "tol": cfg.tol_H,
            "slice_points": int(len(W)), "a_points": len(As), "grid": int(len(s_grid))}


# ---------------------------------------------------------------------------
# v) Goh condition

def goh_preconditions(P: StrictProblem, ep: ExtendedProcess, seed: int = 0) -> dict:
    beta = float(ep.endpoint[-1])
    rng = np.random.default_rng([seed, 101])
    _, Y = ep.grid()
    lo, hi = Y[:, 1:P.n + 1].min(axis=0) - 1, Y[:, 1:P.n + 1].max(axis=0) + 1
    rays = P.C.rays
    worst = 0.0
    try:
        for _ in range(100):
            x = lo + (hi - lo) * rng.random(P.n)
            w = rng.random(len(rays)) @ rays if len(rays) else np.zeros(P.m)
            worst = max(worst, abs(recession_l1(P, x, 0.0, w)))
        impulse_free = worst < 1e-9
    except ArithmeticError:
        impulse_free = False
        worst = math.inf
    return {"beta_S": beta, "K": P.K, "budget_slack": beta < P.K - BUDGET_TOL,
            "recession_zero": impulse_free, "recession_max": worst}


def check_goh(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
              cfg: CheckConfig | None = None, pairs: Sequence[tuple[int, int]] | None = None) -> dict:
    cfg = cfg or CheckConfig()
    pre = goh_preconditions(P, ep, cfg.seed)
    if pairs is None:
        pairs = [(i, j) for i in range(1, P.m1 + 1) for j in range(i + 1, P.m1 + 1)]
    out = {"preconditions": pre, "tol": cfg.tol_goh, "tol_meas": cfg.tol_meas,
           "method": cfg.method, "grid": cfg.grid}
    if not (pre["budget_slack"] and pre["recession_zero"]):
        out.update(verdict="PASS", applicable=False, pairs=[],
                   note="preconditions not met; the condition is not asserted")
        return out
    grid = midpoint_grid(ep.S, cfg.grid)
    rows = []
    ok_all = True
    for i, j in pairs:
        entries = []
        good = 0
        worst = 0.0
        for s in grid:
            y = ep.state_at(s)[1:P.n + 1]
            B = setvalued_bracket(P.g[i - 1], P.g[j - 1], y, cfg.method, seed=cfg.seed)
            I = covector_interval(mult.p(s), B)
            mem = goh_zero_membership(I, cfg.tol_goh)
            good += mem != "fails"
            worst = max(worst, max(I.lo, 0.0) + max(-I.hi, 0.0))
            entries.append({"s": round(float(s), 12), "interval": [round(I.lo, 12), round(I.hi, 12)],
                            "membership": mem})
        frac = good / len(grid)
        passed = frac >= 1.0 - cfg.tol_meas
        ok_all &= passed
        rows.append({"pair": [i, j], "fraction_holding": frac, "max_distance_of_zero": worst,
                     "verdict": "PASS" if passed else "FAIL", "table": entries})
    out.update(verdict="PASS" if ok_all else "FAIL", applicable=True, pairs=rows)
    return out


# ---------------------------------------------------------------------------
# aggregation

@dataclass
class CheckReport:
    conditions: dict
    provenance: dict
    extras: dict = field(default_factory=dict)

    @property
    def overall(self) -> str:
        return "PASS" if all(self.conditions[c]["verdict"] == "PASS" for c in CONDITIONS) else "FAIL"

    def verdicts(self) -> dict:
        return {c: self.conditions[c]["verdict"] for c in CONDITIONS}

    def to_dict(self) -> dict:
        return _clean({"report_version": REPORT_VERSION, "overall": self.overall,
                       "conditions": self.conditions, "provenance": self.provenance,
                       **self.extras})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return float(f"{v:.12g}") + 0.0
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def validate_multipliers(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers) -> None:
    if mult.lam < 0:
        raise ValidationError("lambda must be nonnegative")
    if mult.pi > 0:
        raise ValidationError("pi must be nonpositive")
    if ep.endpoint[-1] < P.K - BUDGET_TOL and mult.pi != 0:
        raise ValidationError("pi must vanish when beta(S) < K")
    if mult.p(0.0).shape != (P.n,):
        raise ValidationError(f"p must have {P.n} components")


def run_full_check(P: StrictProblem, ep: ExtendedProcess, mult: Multipliers,
                   target: Multicone | None = None, cfg: CheckConfig | None = None) -> CheckReport:
    cfg = cfg or CheckConfig()
    validate_multipliers(P, ep, mult)
    check_feasible(P, ep, cfg.tol_endpoint)
    conditions = {
        "i": check_nontriviality(mult, ep.S, cfg.tol_triv),
        "ii": check_adjoint(P, ep, mult, cfg),
        "iii": check_transversality(P, ep, mult, target, cfg),
        "iv": check_hamiltonian_max(P, ep, mult, cfg),
        "v": check_goh(P, ep, mult, cfg),
    }
    end = ep.endpoint
    provenance = {
        "config": cfg.to_json(),
        "problem": P.name,
        "norm": P.norm,
        "S": ep.S,
        "endpoint": np.round(end, 12).tolist(),
        "cost": P.cost(end),
        "canonical": ep.canonical,
        "multipliers": {"p0": mult.p0, "lambda": mult.lam, "pi": mult.pi,
                        "p": mult.describe_p() or "sampled path",
                        "policy": mult.policy.to_json()},
        "estimators": {"clarke": cfg.method, "bracket": cfg.method,
                       "slice": "cone rays plus scrambled Sobol points"},
    }
    return CheckReport(conditions, provenance)


# ---------------------------------------------------------------------------
# multiplier search

def _simplex(dim: int, N: int):
    for combo in itertools.product(range(N + 1), repeat=dim - 1):
        if sum(combo) <= N:
            yield np.array(list(combo) + [N - sum(combo)], dtype=float) / N


def _adjoint_basis(P, ep, policy):
    """Paths for terminal ``e_i`` (lam = 0) and for ``p(S) = 0, lam = 1``."""
    sel = selected_matrices(P, ep, policy)
    pT = np.vstack([np.eye(P.n), np.zeros(P.n)])
    lam = np.concatenate([np.zeros(P.n), [1.0]])
    ts, Ps, dPs = backward_adjoint(sel, pT, lam)
    return [(ts, Ps[:, k], dPs[:, k]) for k in range(P.n + 1)]


def _combine(paths, pS, lam):
    ts = paths[0][0]
    Pm = sum(c * pth[1] for c, pth in zip(pS, paths[:-1])) + lam * paths[-1][1]
    dP = sum(c * pth[2] for c, pth in zip(pS, paths[:-1])) + lam * paths[-1][2]
    return ts, Pm, dP


def search_multipliers(P: StrictProblem, ep: ExtendedProcess, target: Multicone | None = None,
                       cfg: CheckConfig | None = None) -> dict:
    """Mesh search for multipliers satisfying i)-iv).

    The transversality condition parametrizes ``(p0, p(S))`` by ``lam``, a
    vertex of the Clarke gradient of ``Psi`` and a conic combination of the
    polar generators; the adjoint is linear in these, so one backward
    solve per basis vector and selection table suffices.  Condition iv) is
    screened with a :class:`HamiltonianTable`, independent of
    :func:`check_hamiltonian_max`.
    """
    cfg = cfg or CheckConfig()
    target = target or P.target
    check_feasible(P, ep, cfg.tol_endpoint)
    beta = float(ep.endpoint[-1])
    pis = [0.0] if beta < P.K - BUDGET_TOL else [-k / 4 for k in range(5)]
    point = endpoint_tx(P, ep)
    Mv = psi_hull(P, point, cfg.method).flat
    policies = policy_tables(P, ep)
    total = sum(len(Mv) * len(pis) * len(policies) * math.comb(cfg.search_mesh + len(polar(T).rays),
                                                                  len(polar(T).rays)) for T in target)
    if total > cfg.search_cap:
        raise SearchCapExceeded(f"{total} mesh points exceed the cap {cfg.search_cap}")
    table = hamiltonian_table(P, ep, cfg)
    survivors = []
    examined = 0
    for pol in policies:
        basis = _adjoint_basis(P, ep, pol)
        for ti, T in enumerate(target):
            R = polar(T).rays
            for mi, m in enumerate(Mv):
                for weights in _simplex(1 + len(R), cfg.search_mesh):
                    lam, mu = weights[0], weights[1:]
                    xi = mu @ R if len(R) else np.zeros(P.n + 1)
                    vec = -lam * m - xi
                    p0, pS = vec[0], vec[1:]
                    for pi in pis:
                        examined += 1
                        path = _combine(basis, pS, lam)
                        scale = abs(p0) + np.sum(np.abs(pS)) + lam
                        if scale <= cfg.tol_triv:
                            continue
                        mult = Multipliers(p0 / scale, lam / scale, pi / scale,
                                           p_path=(path[0], path[1] / scale, path[2] / scale),
                                           policy=pol)
                        gap = table.gap(mult.p0, np.atleast_2d(mult.p(table.s)), mult.lam)
                        if gap > cfg.tol_H:
                            continue
                        tr = check_transversality(P, ep, mult, target, cfg)
                        nt = check_nontriviality(mult, ep.S, cfg.tol_triv)
                        if tr["verdict"] != "PASS" or nt["verdict"] != "PASS":
                            continue
                        survivors.append({
                            "key": (ti, mi, tuple(np.round(weights, 12)), pi, pol.table),
                            "multipliers": mult,
                            "p0": mult.p0, "lambda": mult.lam, "pi": mult.pi,
                            "p_terminal": np.round(mult.p(ep.S), 12).tolist(),
                            "p_initial": np.round(mult.p(0.0), 12).tolist(),
                            "policy": pol.to_json(), "cone_index": ti,
                            "hamiltonian_gap": gap,
                        })
    survivors.sort(key=lambda r: repr(r["key"]))
    return {"survivors": survivors, "examined": examined, "mesh": cfg.search_mesh,
            "policies": len(policies), "feasible": bool(survivors)}


def survivor_json(s: dict) -> dict:
    return {k: v for k, v in s.items() if k not in ("key", "multipliers")}
