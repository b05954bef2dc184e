"""Expression trees for piecewise-smooth scalar functions.

Expressions are immutable, hashable trees built from constants, named
variables, the four arithmetic operations, integer powers, negation and
``abs``.  ``min``/``max`` are accepted by the parser but rewritten to
``abs`` so that a single kink mechanism exists internally::

    min(a, b) = (a + b - |a - b|) / 2
    max(a, b) = (a + b + |a - b|) / 2

Differentiation is exact away from kinks: ``d|z| = sign(z) dz``.  The
``Sign`` node produced by :func:`diff` is internal and is never printed in
a form the parser accepts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator

import numpy as np

__all__ = [
    "Expr", "Const", "Var", "Add", "Sub", "Mul", "Div", "Pow", "Neg", "Abs",
    "Sign", "Dims", "ParseError", "EvalError", "parse", "to_text", "evaluate",
    "diff", "variables", "kink_nodes", "substitute",
]


class ParseError(ValueError):
    """Malformed expression text.  ``pos`` is the 1-based column."""

    def __init__(self, message: str, line: int = 1, col: int = 1):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col
        self.pos = col


class EvalError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# nodes

class Expr:
    __slots__ = ()
    prec = 5

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    @property
    def prec(self):
        return 3 if self.value < 0 else 5


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


class Add(_Binary):
    prec = 1
    sym = " + "


class Sub(_Binary):
    prec = 1
    sym = " - "


class Mul(_Binary):
    prec = 2
    sym = "*"


class Div(_Binary):
    prec = 2
    sym = "/"


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: int
    prec = 4

    def children(self):
        return (self.base,)


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr
    prec = 3

    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Abs(Expr):
    operand: Expr

    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Sign(Expr):
    """a.e. derivative of ``abs``; only created by :func:`diff`."""
    operand: Expr

    def children(self):
        return (self.operand,)


def walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def variables(e: Expr) -> set[str]:
    return {node.name for node in walk(e) if isinstance(node, Var)}


def kink_nodes(e: Expr) -> list[Expr]:
    """Arguments of the ``abs`` nodes of ``e``, unique, in pre-order."""
    seen: dict[Expr, None] = {}
    for node in walk(e):
        if isinstance(node, Abs):
            seen.setdefault(node.operand, None)
    return list(seen)


def substitute(e: Expr, mapping: dict[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, _Binary):
        return type(e)(substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Pow):
        return Pow(substitute(e.base, mapping), e.exponent)
    return type(e)(substitute(e.children()[0], mapping))


# ---------------------------------------------------------------------------
# printing

def _fmt_const(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(float(v))


def to_text(e: Expr) -> str:
    if isinstance(e, Const):
        return _fmt_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, _Binary):
        left = to_text(e.left)
        right = to_text(e.right)
        if e.left.prec < e.prec:
            left = f"({left})"
        if e.right.prec <= e.prec:
            right = f"({right})"
        return f"{left}{e.sym}{right}"
    if isinstance(e, Pow):
        base = to_text(e.base)
        if e.base.prec < 5:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Neg):
        inner = to_text(e.operand)
        if e.operand.prec < 4:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Abs):
        return f"abs({to_text(e.operand)})"
    if isinstance(e, Sign):
        return f"sign({to_text(e.operand)})"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# parsing

@dataclass(frozen=True)
class Dims:
    """Declared dimensions; fixes which identifiers are legal.

    ``allow_w`` admits ``w0, w1..wm`` (used by explicit recession
    functions).
    """
    n: int
    m: int = 0
    q: int = 0
    allow_w: bool = False

    def valid(self, name: str) -> bool:
        if name in ("t", "s"):
            return True
        mo = re.fullmatch(r"([xuaw])(\d+)", name)
        if not mo:
            return False
        kind, idx = mo.group(1), int(mo.group(2))
        if mo.group(2) != str(idx):
            return False
        if kind == "x":
            return 1 <= idx <= self.n
        if kind == "u":
            return 1 <= idx <= self.m
        if kind == "a":
            return 1 <= idx <= self.q
        return self.allow_w and 0 <= idx <= self.m


_TOKEN = re.compile(r"\s*(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(.))")


class _Parser:
    def __init__(self, text: str, dims: Dims):
        self.text = text
        self.dims = dims
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            mo = _TOKEN.match(text, pos)
            if mo is None or mo.end() == pos:
                break
            if mo.group(1) is not None:
                self.tokens.append(("num", mo.group(1), mo.start(1)))
            elif mo.group(2) is not None:
                self.tokens.append(("id", mo.group(2), mo.start(2)))
            elif mo.group(3) is not None:
                self.tokens.append(("op", mo.group(3), mo.start(3)))
            pos = mo.end()
        self.tokens.append(("eof", "", len(text.rstrip())))
        self.i = 0

    def error(self, message: str, offset: int):
        line = self.text.count("\n", 0, offset) + 1
        col = offset - (self.text.rfind("\n", 0, offset) + 1) + 1
        raise ParseError(message, line, col)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value or kind == "eof":
            self.error(f"expected {value!r}", pos)

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            rhs = self.factor()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def factor(self) -> Expr:
        kind, val, pos = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.factor())
        node = self.base()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            sign = 1
            if self.peek()[1] == "-" and self.peek()[0] == "op":
                self.take()
                sign = -1
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                self.error("non-constant exponent (integer literal required)", pos)
            node = Pow(node, sign * int(val))
        return node

    def args(self, count: int, name: str, pos: int) -> list[Expr]:
        self.expect("(")
        out = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.take()
            out.append(self.expr())
        self.expect(")")
        if len(out) != count:
            self.error(f"{name} takes {count} argument(s), got {len(out)}", pos)
        return out

    def base(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            if val == "abs":
                (a,) = self.args(1, val, pos)
                return Abs(a)
            if val in ("min", "max"):
                a, b = self.args(2, val, pos)
                kink = Abs(Sub(a, b))
                total = Add(a, b)
                inner = Sub(total, kink) if val == "min" else Add(total, kink)
                return Div(inner, Const(2.0))
            if not self.dims.valid(val):
                self.error(f"unknown variable {val!r}", pos)
            return Var(val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "eof":
            self.error("unexpected end of input", pos)
        self.error(f"unexpected token {val!r}", pos)


def parse(text: str, dims: Dims) -> Expr:
    """Parse ``text`` into an expression tree.

    >>> to_text(parse("x1 + abs(x2)", Dims(2)))
    'x1 + abs(x2)'
    """
    p = _Parser(text, dims)
    if p.peek()[0] == "eof":
        p.error("empty expression", 0)
    node = p.expr()
    kind, val, pos = p.peek()
    if kind != "eof":
        p.error(f"unexpected token {val!r}", pos)
    return node


# ---------------------------------------------------------------------------
# differentiation

ZERO = Const(0.0)
ONE = Const(1.0)


def _add(a, b):
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def _sub(a, b):
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def _neg(a):
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _mul(a, b):
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def _div(a, b):
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    return Div(a, b)


def diff(e: Expr, var: str) -> Expr:
    """Derivative of ``e`` with respect to ``var``, valid off kinks."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Add):
        return _add(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Sub):
        return _sub(diff(e.left, var), diff(e.right, var))
    if isinstance(e, Mul):
        return _add(_mul(diff(e.left, var), e.right), _mul(e.left, diff(e.right, var)))
    if isinstance(e, Div):
        num = _sub(_mul(diff(e.left, var), e.right), _mul(e.left, diff(e.right, var)))
        return _div(num, Pow(e.right, 2))
    if isinstance(e, Pow):
        db = diff(e.base, var)
        if db == ZERO or e.exponent == 0:
            return ZERO
        if e.exponent == 1:
            return db
        inner = e.base if e.exponent == 2 else Pow(e.base, e.exponent - 1)
        return _mul(_mul(Const(float(e.exponent)), inner), db)
    if isinstance(e, Neg):
        return _neg(diff(e.operand, var))
    if isinstance(e, Abs):
        dz = diff(e.operand, var)
        return ZERO if dz == ZERO else _mul(Sign(e.operand), dz)
    if isinstance(e, Sign):
        return ZERO
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# evaluation / code generation

def _safe_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvalError("division by zero")
    return a / b


def _np_sign(z):
    return np.sign(z) if isinstance(z, np.ndarray) else float(np.sign(z))


def to_python(e: Expr, names: dict[str, str], signs: dict[Expr, str] | None = None) -> str:
    """Python source for ``e``.

    ``names`` maps variable names to source fragments; ``signs`` maps kink
    arguments to the source fragment holding the sign to use for the
    corresponding ``Sign`` node (defaults to ``_sign(arg)``).
    """
    def go(node):
        if isinstance(node, Const):
            return repr(float(node.value))
        if isinstance(node, Var):
            return names[node.name]
        if isinstance(node, Add):
            return f"({go(node.left)} + {go(node.right)})"
        if isinstance(node, Sub):
            return f"({go(node.left)} - {go(node.right)})"
        if isinstance(node, Mul):
            return f"({go(node.left)} * {go(node.right)})"
        if isinstance(node, Div):
            return f"_div({go(node.left)}, {go(node.right)})"
        if isinstance(node, Pow):
            if node.exponent < 0:
                return f"_div(1.0, ({go(node.base)}) ** {-node.exponent})"
            return f"(({go(node.base)}) ** {node.exponent})"
        if isinstance(node, Neg):
            return f"(-{go(node.operand)})"
        if isinstance(node, Abs):
            return f"abs({go(node.operand)})"
        if isinstance(node, Sign):
            if signs is not None and node.operand in signs:
                return signs[node.operand]
            return f"_sign({go(node.operand)})"
        raise TypeError(f"not an expression: {node!r}")
    return go(e)


GLOBALS = {"_div": _safe_div, "_sign": _np_sign, "abs": abs}


def compile_function(args: str, body: str, extra: dict | None = None):
    src = f"def _fn({args}):\n    return {body}\n"
    ns = dict(GLOBALS)
    if extra:
        ns.update(extra)
    exec(compile(src, "<nsgoh-expr>", "exec"), ns)
    return ns["_fn"]


def evaluate(e: Expr, point: dict[str, float]):
    """Evaluate ``e`` with variables bound by ``point``.

    Values may be numpy arrays (evaluation broadcasts).
    """
    missing = variables(e) - set(point)
    if missing:
        raise EvalError(f"unassigned variable(s): {', '.join(sorted(missing))}")
    names = {v: f"P[{v!r}]" for v in variables(e)}
    fn = compile_function("P", to_python(e, names))
    with np.errstate(divide="raise", invalid="raise"):
        try:
            return fn(point)
        except (ZeroDivisionError, FloatingPointError) as exc:
            raise EvalError(str(exc)) from exc


def is_constant(e: Expr) -> bool:
    return not variables(e)


def const_value(e: Expr) -> float:
    return float(evaluate(e, {}))
