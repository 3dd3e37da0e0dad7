"""Scalar coefficient expressions.

A tiny closed language for matrix-entry formulas: floating literals, the
coordinate variables ``x``/``y`` (aliases ``x_1``/``x_2``), the named
constants ``pi`` and ``sqrt2``, the four arithmetic operations, unary
minus, and the calls ``sin(...)`` and ``cos(...)``.  Expressions are held
as small immutable trees; :func:`parse` and :func:`to_text` are mutually
inverse on parser-produced trees, and :func:`evaluate` broadcasts over
numpy coordinate arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprError",
    "parse",
    "parse_expr",
    "to_text",
    "print_expr",
    "evaluate",
    "variables",
    "divisors",
]

_CONSTANTS = {"pi": math.pi, "sqrt2": math.sqrt(2.0)}
_FUNCTIONS = ("sin", "cos")
_VAR_NAMES = {"x": 0, "y": 1, "x_1": 0, "x_2": 1}
_AXIS_TEXT = {0: "x", 1: "y"}


class ExprError(ValueError):
    """Raised for malformed expression text, with a character position."""

    def __init__(self, message, pos):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


@dataclass(frozen=True)
class Const:
    """Literal value; ``label`` preserves named constants through printing."""

    value: float
    label: str | None = None


@dataclass(frozen=True)
class Var:
    axis: int  # 0-based coordinate axis


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str  # 'sin' or 'cos'
    arg: "Expr"


Expr = Const | Var | Neg | BinOp | Call


# --- tokenizer ---------------------------------------------------------------

_OPS = set("+-*/()")


def _tokenize(text):
    """Yield (kind, value, pos) triples; kind in {'num','name','op','end'}."""
    tokens = []
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if c in " \t\n\r":
            i += 1
            continue
        if c in _OPS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or (c == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExprError(f"unexpected character {c!r}", i)
    tokens.append(("end", "", n))
    return tokens


# --- parser ------------------------------------------------------------------


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.k = 0

    def peek(self):
        return self.tokens[self.k]

    def advance(self):
        tok = self.tokens[self.k]
        self.k += 1
        return tok

    def expect_op(self, op):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            shown = val if kind != "end" else "end of input"
            raise ExprError(f"expected {op!r}, found {shown!r}", pos)
        return self.advance()

    def parse(self):
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprError(f"unexpected trailing input {val!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.unary())
            else:
                return node

    def unary(self):
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self):
        kind, val, pos = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in _FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                k2, v2, p2 = self.peek()
                if k2 == "op" and v2 == ")":
                    self.advance()
                    return Call(val, arg)
                raise ExprError(
                    f"{val} takes exactly one argument; expected ')', found {v2!r}", p2
                )
            if val in _CONSTANTS:
                return Const(_CONSTANTS[val], label=val)
            if val in _VAR_NAMES:
                return Var(_VAR_NAMES[val])
            raise ExprError(f"unknown name {val!r}", pos)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        shown = val if kind != "end" else "end of input"
        raise ExprError(f"expected a value, found {shown!r}", pos)


def parse(text):
    """Parse expression text into an :class:`Expr` tree.

    Raises :class:`ExprError` with the offending character position on
    malformed input.
    """
    return _Parser(text).parse()


parse_expr = parse


# --- printer -----------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_ATOM = 9


def _prec(e):
    if isinstance(e, BinOp):
        return _PREC_ADD if e.op in "+-" else _PREC_MUL
    if isinstance(e, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def _fmt_const(c):
    if c.label is not None:
        return c.label
    v = c.value
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_text(e):
    """Render a tree to text that reparses to the identical tree.

    Parentheses are emitted exactly where precedence or associativity
    requires them, so ``parse(to_text(e)) == e`` for every tree the
    parser can produce (negative bare :class:`Const` values are printed
    but round-trip as ``Neg`` of the positive literal).
    """
    if isinstance(e, Const):
        return _fmt_const(e)
    if isinstance(e, Var):
        return _AXIS_TEXT.get(e.axis, f"x_{e.axis + 1}")
    if isinstance(e, Neg):
        inner = to_text(e.arg)
        if _prec(e.arg) < _PREC_NEG:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    if isinstance(e, BinOp):
        p = _prec(e)
        lt = to_text(e.left)
        if _prec(e.left) < p:
            lt = f"({lt})"
        rt = to_text(e.right)
        if _prec(e.right) <= p:
            rt = f"({rt})"
        return f"{lt} {e.op} {rt}"
    raise TypeError(f"not an expression node: {e!r}")


print_expr = to_text


# --- evaluation --------------------------------------------------------------


def evaluate(e, coords):
    """Evaluate over numpy coordinate arrays.

    ``coords`` is a sequence of per-axis arrays (or scalars) of a common
    broadcastable shape; the result broadcasts over them.  Referencing an
    axis beyond ``len(coords)`` raises ``ValueError``.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.axis >= len(coords):
            raise ValueError(
                f"expression uses axis {e.axis + 1} but only "
                f"{len(coords)} coordinate(s) were given"
            )
        return np.asarray(coords[e.axis], dtype=float)
    if isinstance(e, Neg):
        return -evaluate(e.arg, coords)
    if isinstance(e, Call):
        arg = evaluate(e.arg, coords)
        return np.sin(arg) if e.func == "sin" else np.cos(arg)
    if isinstance(e, BinOp):
        a = evaluate(e.left, coords)
        b = evaluate(e.right, coords)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        return a / b
    raise TypeError(f"not an expression node: {e!r}")


def variables(e):
    """Set of 0-based axes the expression references."""
    if isinstance(e, Var):
        return {e.axis}
    if isinstance(e, Neg):
        return variables(e.arg)
    if isinstance(e, Call):
        return variables(e.arg)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    return set()


def divisors(e):
    """All right-hand subtrees of divisions, for zero-safety screening."""
    out = []
    if isinstance(e, (Neg, Call)):
        out.extend(divisors(e.arg))
    elif isinstance(e, BinOp):
        out.extend(divisors(e.left))
        out.extend(divisors(e.right))
        if e.op == "/":
            out.append(e.right)
    return out
