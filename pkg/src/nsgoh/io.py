"""Problem, process and multiplier files (TOML) and trajectory CSV."""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .cones import Multicone, PolyhedralCone
from .expr import Dims, ParseError, parse, to_text
from .field import NonsmoothField
from .problem import (
    ExtendedProcess, Multipliers, Piece, SelectionPolicy, StrictPiece, StrictProblem,
    ValidationError,
)

EXAMPLES = "sec5"


class FileError(ValueError):
    """A problem with an input file; the message names the file and the key."""


def example_path(name: str) -> Path:
    """Path of a shipped example, e.g. ``example_path("candidate.toml")``."""
    return Path(str(resources.files("nsgoh") / "data" / EXAMPLES / name))


def resolve(path) -> Path:
    """``path`` itself, or the shipped example of that name if the file does not exist."""
    p = Path(path)
    if p.exists():
        return p
    for cand in (p.name, str(p).removeprefix(f"{EXAMPLES}/")):
        q = example_path(cand)
        if q.exists():
            return q
    raise FileError(f"{path}: no such file")


def load_toml(path) -> dict:
    p = resolve(path)
    try:
        with open(p, "rb") as fh:
            return tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise FileError(f"{p}: {exc}") from exc


def _get(doc: dict, key: str, where: str, default=None, required: bool = True):
    if key in doc:
        return doc[key]
    if required and default is None:
        raise FileError(f"{where}: missing key '{key}'")
    return default


def _cone(doc: dict, where: str, dim: int | None = None) -> PolyhedralCone:
    gens = _get(doc, "generators", where)
    lines = doc.get("lines")
    try:
        if not gens:
            if dim is None:
                raise FileError(f"{where}: an empty cone needs a dimension")
            return PolyhedralCone.zero(dim)
        return PolyhedralCone(gens, lines, dim)
    except ValueError as exc:
        raise FileError(f"{where}: {exc}") from exc


def _target(doc: dict, where: str, dim: int):
    cones = [_cone(c, f"{where}.cones[{k}]", dim) for k, c in enumerate(doc.get("cones", []))]
    point = doc.get("point")
    return (Multicone(cones) if cones else None), point


# ---------------------------------------------------------------------------
# problems

@dataclass
class ProblemFile:
    problem: StrictProblem
    alt_fields: list[NonsmoothField] | None
    reference: dict
    doc: dict

    def variant(self, paper_variant: bool) -> StrictProblem:
        if not paper_variant:
            return self.problem
        if self.alt_fields is None:
            raise FileError("--paper-variant needs an [alt_fields] section in the problem file")
        return self.problem.with_fields(self.alt_fields, self.problem.name + "+alt_fields")


def _fields(rows, n: int, m: int, q: int, where: str) -> list[NonsmoothField]:
    dims = Dims(n, m, q)
    coords = tuple(f"x{i + 1}" for i in range(n))
    try:
        return [NonsmoothField([parse(t, dims) for t in gi], coords, name=f"g{i + 1}")
                for i, gi in enumerate(rows)]
    except ParseError as exc:
        raise FileError(f"{where}: {exc}") from exc


def problem_from_doc(doc: dict, source: str = "<problem>") -> ProblemFile:
    sec = _get(doc, "problem", source)
    where = f"{source} [problem]"
    n, m = int(_get(sec, "n", where)), int(_get(sec, "m", where))
    q = int(sec.get("q", 0))
    C = _cone(doc["cone"], f"{source} [cone]", m) if "cone" in doc else None
    box = doc.get("A", {})
    target, point = _target(doc.get("target", {}), f"{source} [target]", n + 1)
    try:
        P = StrictProblem.from_strings(
            n=n, m=m, m1=sec.get("m1"), q=q, f=_get(sec, "drift", where), g=_get(sec, "g", where),
            psi=_get(sec, "psi", where), x0=_get(sec, "x0", where), K=float(sec.get("K", np.inf)),
            l0=sec.get("l0", "0"), l1=sec.get("l1", "0"), recession=sec.get("recession"), C=C,
            A_lo=box.get("lo", []), A_hi=box.get("hi", []), target=target, target_point=point,
            norm=sec.get("norm", "euclidean"), name=sec.get("name", Path(source).stem))
    except (ParseError, ValidationError, ValueError) as exc:
        raise FileError(f"{where}: {exc}") from exc
    alt = None
    if "alt_fields" in doc:
        alt = _fields(_get(doc["alt_fields"], "g", f"{source} [alt_fields]"), n, m, q,
                      f"{source} [alt_fields]")
        if len(alt) != m or any(a.dim_out != n for a in alt):
            raise FileError(f"{source} [alt_fields]: need {m} fields with {n} components")
    return ProblemFile(P, alt, dict(doc.get("reference", {})), doc)


def load_problem(path) -> ProblemFile:
    p = resolve(path)
    return problem_from_doc(load_toml(p), str(p))


def _cone_doc(C: PolyhedralCone) -> dict:
    return {"generators": C.generators.tolist(), "lines": C.lines.tolist()}


def problem_to_doc(pf: ProblemFile) -> dict:
    P = pf.problem
    sec = {"name": P.name, "n": P.n, "m": P.m, "m1": P.m1, "q": P.q,
           "drift": [to_text(e) for e in P.f.components],
           "g": [[to_text(e) for e in gi.components] for gi in P.g],
           "l0": to_text(P.l0), "l1": to_text(P.l1), "psi": to_text(P.psi),
           "x0": P.x0.tolist(), "norm": P.norm}
    if np.isfinite(P.K):
        sec["K"] = P.K
    if P.recession is not None:
        sec["recession"] = to_text(P.recession)
    doc = {"problem": sec, "cone": _cone_doc(P.C),
           "A": {"lo": P.A_lo.tolist(), "hi": P.A_hi.tolist()},
           "target": {"cones": [_cone_doc(c) for c in P.target]}}
    if P.target_point is not None:
        doc["target"]["point"] = P.target_point.tolist()
    if pf.alt_fields is not None:
        doc["alt_fields"] = {"g": [[to_text(e) for e in gi.components] for gi in pf.alt_fields]}
    if pf.reference:
        doc["reference"] = pf.reference
    return doc


def dumps(doc: dict) -> str:
    return tomli_w.dumps(doc)


# ---------------------------------------------------------------------------
# processes and multipliers

@dataclass
class ProcessFile:
    pieces: list[Piece]
    target: Multicone | None
    target_point: list | None
    multipliers: dict | None
    doc: dict


def pieces_from_doc(rows, P: StrictProblem, where: str) -> list[Piece]:
    if not rows:
        raise FileError(f"{where}: the control schedule is empty")
    out = []
    for k, r in enumerate(rows):
        loc = f"{where}.pieces[{k}]"
        try:
            piece = Piece(float(_get(r, "duration", loc)), float(_get(r, "w0", loc)),
                          tuple(_get(r, "w", loc)), tuple(r.get("alpha", [])),
                          float(r.get("zeta", 0.0)))
        except (ValidationError, TypeError, ValueError) as exc:
            raise FileError(f"{loc}: {exc}") from exc
        if len(piece.w) != P.m or len(piece.alpha) != P.q:
            raise FileError(f"{loc}: w needs {P.m} and alpha {P.q} entries")
        if not P.contains_control(piece.w):
            raise FileError(f"{loc}: w = {list(piece.w)} is not in the control cone")
        if not P.in_box(piece.alpha):
            raise FileError(f"{loc}: alpha is outside the control box")
        if abs(piece.zeta) > P.rho:
            raise FileError(f"{loc}: |zeta| exceeds rho = {P.rho}")
        out.append(piece)
    return out


def process_from_doc(doc: dict, P: StrictProblem, source: str = "<process>") -> ProcessFile:
    sec = _get(doc, "process", source)
    pieces = pieces_from_doc(sec.get("pieces", []), P, f"{source} [process]")
    S = sec.get("S")
    total = float(sum(p.duration for p in pieces))
    if S is not None and abs(float(S) - total) > 1e-9 * max(1.0, total):
        raise FileError(f"{source} [process]: S = {S} but the durations sum to {total}")
    target, point = (None, None)
    if "target" in doc:
        target, point = _target(doc["target"], f"{source} [target]", P.n + 1)
    return ProcessFile(pieces, target, point, doc.get("multipliers"), doc)


def load_process(path, P: StrictProblem) -> ProcessFile:
    p = resolve(path)
    return process_from_doc(load_toml(p), P, str(p))


def pieces_to_doc(pieces) -> dict:
    rows = [{"duration": p.duration, "w0": p.w0, "w": list(p.w), "alpha": list(p.alpha),
             "zeta": p.zeta} for p in pieces]
    return {"process": {"S": float(sum(p.duration for p in pieces)), "pieces": rows}}


def strict_pieces_from_doc(doc: dict, source: str = "<strict>") -> list[StrictPiece]:
    rows = _get(doc, "strict", source).get("pieces", [])
    if not rows:
        raise FileError(f"{source} [strict]: the control schedule is empty")
    out = []
    for k, r in enumerate(rows):
        loc = f"{source} [strict].pieces[{k}]"
        try:
            out.append(StrictPiece(float(_get(r, "duration", loc)), tuple(_get(r, "u", loc)),
                                   tuple(r.get("a", []))))
        except (ValidationError, TypeError, ValueError) as exc:
            raise FileError(f"{loc}: {exc}") from exc
    return out


@dataclass
class MultiplierSpec:
    """Multipliers as read from a file; ``p`` strings or a terminal value."""
    p0: float
    lam: float
    pi: float
    p: list[str] | None
    p_terminal: list[float] | None
    policy: SelectionPolicy

    def build(self, P: StrictProblem, ep: ExtendedProcess, grid: int = 200) -> Multipliers:
        if self.p is not None:
            return Multipliers.from_strings(self.p0, self.lam, self.pi, self.p, P.n, self.policy)
        from .integrate import solve_adjoint
        mult, _ = solve_adjoint(P, ep, self.p0, self.p_terminal, self.lam, self.pi,
                                policy=self.policy, residual_points=0)
        return mult


def multipliers_from_doc(sec: dict | None, source: str = "<multipliers>") -> MultiplierSpec:
    if sec is None:
        raise FileError(f"{source}: no [multipliers] section")
    where = f"{source} [multipliers]"
    p = sec.get("p")
    pT = sec.get("p_terminal")
    if (p is None) == (pT is None):
        raise FileError(f"{where}: give exactly one of 'p' and 'p_terminal'")
    try:
        policy = SelectionPolicy.from_mapping(sec.get("policy"), sec.get("policy_default", "midpoint"))
    except ValidationError as exc:
        raise FileError(f"{where}: {exc}") from exc
    return MultiplierSpec(float(_get(sec, "p0", where)), float(_get(sec, "lambda", where)),
                          float(sec.get("pi", 0.0)), p, pT, policy)


def load_multipliers(path) -> MultiplierSpec:
    p = resolve(path)
    doc = load_toml(p)
    return multipliers_from_doc(doc.get("multipliers"), str(p))


def multipliers_to_doc(ms: MultiplierSpec) -> dict:
    sec = {"p0": ms.p0, "lambda": ms.lam, "pi": ms.pi}
    if ms.p is not None:
        sec["p"] = list(ms.p)
    else:
        sec["p_terminal"] = list(ms.p_terminal)
    pol = ms.policy.to_json()
    default = pol.pop("default")
    if pol:
        sec["policy"] = pol
    if default != "midpoint":
        sec["policy_default"] = default
    return {"multipliers": sec}


# ---------------------------------------------------------------------------
# trajectories

def trajectory_csv(ep: ExtendedProcess, n: int, every: int = 1) -> str:
    """Rows ``s, y0, x1..xn, yl, beta`` for every ``every``-th stored sample."""
    s, Y = ep.grid()
    keep = np.concatenate([np.diff(s) > 0, [True]])
    s, Y = s[keep], Y[keep]
    idx = np.unique(np.concatenate([np.arange(0, len(s), max(1, every)), [len(s) - 1]]))
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "y0"] + [f"x{i + 1}" for i in range(n)] + ["yl", "beta"])
    for k in idx:
        w.writerow([f"{s[k]:.12g}"] + [f"{v:.12g}" for v in Y[k]])
    return buf.getvalue()
