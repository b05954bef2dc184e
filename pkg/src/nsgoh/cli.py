"""Command line entry point: ``nsgoh <subcommand> ...``.

Exit codes: 0 when every verdict is PASS, 2 when some verdict is FAIL,
1 on any input or runtime error.  ``GOH_SEED`` overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .checker import (
    REPORT_VERSION, CheckConfig, InfeasibleCandidate, SearchCapExceeded, _clean, run_full_check,
    search_multipliers, survivor_json,
)
from .expr import ParseError
from .genjac import METHODS, covector_interval, setvalued_bracket
from .integrate import BlowUp, solve_forward
from .problem import Multipliers, ValidationError, canonical_schedule, schedule_from_strict
from .variations import Bracket, Needle, WindowError, qdq_oracle

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class CliError(Exception):
    pass


def _seed(args) -> int:
    env = os.environ.get("GOH_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(f"GOH_SEED must be an integer, got {env!r}") from exc
    return int(args.seed)


def _fmt(v: float) -> str:
    v = 0.0 if abs(v) < 5e-10 else float(v)
    return f"{v:.8g}"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _problem(args):
    pf = io.load_problem(args.problem)
    return pf, pf.variant(getattr(args, "paper_variant", False))


def _process(args, P):
    proc = io.load_process(args.process, P)
    if proc.target is not None or proc.target_point is not None:
        P = replace(P, target=proc.target or P.target,
                    target_point=proc.target_point if proc.target_point is not None else P.target_point)
    return proc, P


def _config(args) -> CheckConfig:
    cfg = CheckConfig(seed=_seed(args))
    for name in ("grid", "method", "slice_samples", "search_mesh"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    return cfg


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    _, P = _problem(args)
    proc, P = _process(args, P)
    ep = solve_forward(P, proc.pieces, step=args.step)
    if args.csv:
        Path(args.csv).write_text(io.trajectory_csv(ep, P.n, args.every))
    end = ep.endpoint
    head = "(" + ", ".join(_fmt(v) for v in end[: P.n + 1]) + ")"
    line = f"{head} cost {_fmt(P.cost(end))}"
    if end[-1] > 0:
        line += f" beta {_fmt(end[-1])}"
    print(line)
    return EXIT_PASS


def _bracket_comparison(pf, ep) -> dict:
    """Bracket hulls of both field sets along the first grid point of ``ep``."""
    P = pf.problem
    if pf.alt_fields is None or P.m1 < 2:
        return {}
    y = ep.state_at(0.5 * ep.S / 200)[1:P.n + 1]
    out = {"point": np.round(y, 12).tolist()}
    for label, fields in (("problem_fields", P.g), ("alt_fields", pf.alt_fields)):
        B = setvalued_bracket(fields[0], fields[1], y)
        out[label] = {"vertices": np.round(B.vertices, 12).tolist()}
    if pf.reference:
        out["reference"] = pf.reference
    return {"bracket_comparison": out}


def cmd_check(args) -> int:
    pf, P = _problem(args)
    proc, P = _process(args, P)
    if args.multipliers:
        ms = io.load_multipliers(args.multipliers)
    else:
        ms = io.multipliers_from_doc(proc.multipliers, str(args.process))
    cfg = _config(args)
    ep = solve_forward(P, proc.pieces)
    mult = ms.build(P, ep)
    report = run_full_check(P, ep, mult, cfg=cfg)
    report.extras.update(_bracket_comparison(pf, ep))
    report.provenance["paper_variant"] = bool(args.paper_variant)
    _emit(report.to_json() + "\n", args.out)
    return EXIT_PASS if report.overall == "PASS" else EXIT_FAIL


def _parse_covector(text: str, n: int):
    parts = text.split()
    if len(parts) != n:
        raise CliError(f"--covector needs {n} space-separated expressions")
    try:
        return Multipliers.from_strings(0.0, 0.0, 0.0, parts, n)
    except (ParseError, ValidationError) as exc:
        raise CliError(f"--covector: {exc}") from exc


def cmd_bracket(args) -> int:
    _, P = _problem(args)
    x = np.asarray(args.point, float)
    if x.shape != (P.n,):
        raise CliError(f"--point needs {P.n} coordinates")
    i, j = args.pair
    if not (1 <= i <= P.m and 1 <= j <= P.m):
        raise CliError(f"--pair indices must lie in 1..{P.m}")
    methods = ["enumeration", "sampling"] if args.method == "both" else [args.method]
    seed = _seed(args)
    hulls = {m: setvalued_bracket(P.g[i - 1], P.g[j - 1], x, m, seed=seed) for m in methods}
    out = {"report_version": REPORT_VERSION, "point": x.tolist(), "pair": [i, j],
           "hulls": {m: np.round(B.vertices, 12).tolist() for m, B in hulls.items()}}
    if len(methods) == 2:
        out["hausdorff"] = hulls[methods[0]].hausdorff(hulls[methods[1]])
    if args.covector:
        p = _parse_covector(args.covector, P.n).p(args.s)
        out["covector"] = np.round(p, 12).tolist()
        out["intervals"] = {m: covector_interval(p, B).as_list() for m, B in hulls.items()}
    _emit(_dump_json(out), args.out)
    return EXIT_PASS


def _generator(row: dict, where: str):
    if "bracket" in row:
        i, j = row["bracket"]
        return Bracket(int(i), int(j))
    if "needle" in row:
        nd = row["needle"]
        return Needle(float(nd["w0"]), tuple(nd["w"]), tuple(nd.get("alpha", [])),
                      float(nd.get("zeta", 0.0)))
    raise CliError(f"{where}: each variation needs 'bracket' or 'needle'")


def cmd_variations(args) -> int:
    _, P = _problem(args)
    proc, P = _process(args, P)
    specs = []
    if args.spec:
        doc = io.load_toml(args.spec)
        for k, row in enumerate(doc.get("variations", [])):
            specs.append((float(row["s"]), _generator(row, f"{args.spec} variations[{k}]")))
    for s, i, j in args.bracket or []:
        specs.append((float(s), Bracket(int(i), int(j))))
    if not specs:
        raise CliError("no variations given (use --spec or --bracket)")
    eps = [float(e) for e in args.eps_schedule.split(",")]
    ep = solve_forward(P, proc.pieces)
    rep = qdq_oracle(P, ep, specs, eps, method=args.method or "enumeration")
    rep["report_version"] = REPORT_VERSION
    _emit(_dump_json(rep), args.out)
    return EXIT_PASS if rep["verdict"] == "PASS" else EXIT_FAIL


def cmd_search(args) -> int:
    _, P = _problem(args)
    proc, P = _process(args, P)
    cfg = _config(args)
    ep = solve_forward(P, proc.pieces)
    res = search_multipliers(P, ep, cfg=cfg)
    grid = np.linspace(0.0, ep.S, args.samples)
    rows = []
    for s in res["survivors"]:
        row = survivor_json(s)
        row["p_samples"] = {"s": grid.tolist(), "p": s["multipliers"].p(grid).tolist()}
        rows.append(row)
    out = {"report_version": REPORT_VERSION, "examined": res["examined"], "mesh": res["mesh"],
           "policies": res["policies"], "feasible": res["feasible"], "survivors": rows,
           "normalization": "|p0| + |p(S)|_1 + lambda = 1"}
    _emit(_dump_json(out), args.out)
    return EXIT_PASS if res["feasible"] else EXIT_FAIL


def cmd_extend(args) -> int:
    _, P = _problem(args)
    src = io.resolve(args.strict)
    doc = io.load_toml(src)
    if "strict" in doc:
        rate = args.rate if args.rate == "uniform" else float(args.rate)
        pieces = schedule_from_strict(io.strict_pieces_from_doc(doc, str(src)), rate, P.norm)
    else:
        pieces = io.process_from_doc(doc, P, str(src)).pieces
    if args.canonical:
        pieces = canonical_schedule(pieces, P.norm)
    io.pieces_from_doc(io.pieces_to_doc(pieces)["process"]["pieces"], P, "output")
    _emit(io.dumps(io.pieces_to_doc(pieces)), args.out)
    return EXIT_PASS


# ---------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsgoh", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, process=True):
        p.add_argument("problem", help="problem TOML file (or the name of a shipped example)")
        if process:
            p.add_argument("process", help="process TOML file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1, help="worker cap (work runs in-process)")
        p.add_argument("--out", help="write the result here instead of stdout")

    p = sub.add_parser("simulate", help="integrate an extended process")
    common(p)
    p.add_argument("--csv", help="trajectory CSV output path")
    p.add_argument("--every", type=int, default=1, help="keep every k-th sample in the CSV")
    p.add_argument("--step", type=float, default=None, help="absolute RK4 step cap")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="check the five conditions for given multipliers")
    common(p)
    p.add_argument("--multipliers", help="multiplier TOML file (default: [multipliers] of the process)")
    p.add_argument("--paper-variant", action="store_true", help="swap in the [alt_fields] of the problem file")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--slice-samples", type=int, default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bracket", help="set-valued Lie bracket at a point")
    common(p, process=False)
    p.add_argument("--point", type=float, nargs="+", required=True)
    p.add_argument("--pair", type=int, nargs=2, default=(1, 2))
    p.add_argument("--method", choices=METHODS + ("both",), default="enumeration")
    p.add_argument("--covector", help="n expressions in s, e.g. \"0 2-s -1\"")
    p.add_argument("--s", type=float, default=0.0, help="value of s for --covector")
    p.add_argument("--paper-variant", action="store_true")
    p.set_defaults(func=cmd_bracket)

    p = sub.add_parser("variations", help="difference-quotient oracle for control variations")
    common(p)
    p.add_argument("--spec", help="TOML with [[variations]] rows (s, bracket = [i, j] | needle = {...})")
    p.add_argument("--bracket", nargs=3, action="append", metavar=("S", "I", "J"))
    p.add_argument("--eps-schedule", default="1e-2,1e-3,1e-4")
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--paper-variant", action="store_true")
    p.set_defaults(func=cmd_variations)

    p = sub.add_parser("search", help="mesh search for multipliers satisfying i)-iv)")
    common(p)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--search-mesh", type=int, default=None)
    p.add_argument("--samples", type=int, default=21, help="s samples of p per survivor")
    p.add_argument("--paper-variant", action="store_true")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("extend", help="strict-sense control to an extended schedule")
    common(p, process=False)
    p.add_argument("strict", help="TOML with [strict] pieces (duration, u, a) or a [process]")
    p.add_argument("--rate", default="uniform", help="'uniform' (w0 = 1/(1+|u|)) or a constant dt/ds")
    p.add_argument("--canonical", action="store_true", help="rescale to w0 + |w| = 1")
    p.set_defaults(func=cmd_extend)
    return ap


ERRORS = (CliError, io.FileError, ValidationError, ParseError, InfeasibleCandidate,
          SearchCapExceeded, WindowError, BlowUp, ValueError, ArithmeticError, RuntimeError,
          OSError, KeyError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_PASS
    try:
        return args.func(args)
    except ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
