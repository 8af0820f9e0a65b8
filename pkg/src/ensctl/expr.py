"""Scalar expressions in the parameter variables ``theta1 .. thetad``.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | '+' unary | power
    power  := atom ('^' unary)?          # right-assoc, integer exponent only
    atom   := NUMBER | IDENT | FUNC '(' expr ')' | '(' expr ')'

``theta`` is an alias of ``theta1``. The exponent must fold to an integer
constant at parse time, so ``theta^2^3`` is ``theta^8`` and
``theta^(1/2)`` is rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

__all__ = [
    "Const",
    "Param",
    "Unary",
    "Binary",
    "Pow",
    "Expr",
    "ExprSyntaxError",
    "ExprEvalError",
    "parse_expr",
    "eval_expr",
    "to_text",
    "max_param_index",
    "const",
    "add",
    "mul",
]

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "sqrt": math.sqrt,
    "abs": abs,
}


class ExprSyntaxError(ValueError):
    """Malformed expression text; ``offset`` is the byte offset of the fault."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}" + (f" in {text!r}" if text else ""))


class ExprEvalError(ArithmeticError):
    """Evaluation hit a singular point (division by zero, sqrt of a negative)."""

    def __init__(self, message: str, theta: Sequence[float]):
        self.theta = tuple(float(t) for t in theta)
        super().__init__(f"{message} at theta={self.theta}")


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Param:
    index: int  # 1-based


@dataclass(frozen=True)
class Unary:
    op: str  # 'neg' or a FUNCTIONS key
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: int


Expr = Union[Const, Param, Unary, Binary, Pow]


# --------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    data = text.encode("utf-8")
    toks: list[_Tok] = []
    pos = 0
    # work on the decoded string but report byte offsets
    char_to_byte = _byte_offsets(text)
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", char_to_byte[pos], text)
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), char_to_byte[pos]))
        pos = m.end()
    toks.append(_Tok("end", "", len(data)))
    return toks


def _byte_offsets(text: str) -> list[int]:
    offsets = []
    acc = 0
    for ch in text:
        offsets.append(acc)
        acc += len(ch.encode("utf-8"))
    offsets.append(acc)
    return offsets


# --------------------------------------------------------------------------
# Parser

_THETA_RE = re.compile(r"theta([1-9][0-9]*)?")


class _Parser:
    def __init__(self, text: str, d: int):
        self.text = text
        self.d = d
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: _Tok | None = None):
        tok = tok or self.tok
        return ExprSyntaxError(message, tok.offset, self.text)

    def advance(self) -> _Tok:
        tok = self.tok
        self.i += 1
        return tok

    def expect(self, text: str) -> _Tok:
        if self.tok.text != text:
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {found!r}")
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.text!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.text != "^":
            return base
        caret = self.advance()
        start = self.tok
        exponent = self.unary()
        value = _fold_integer(exponent)
        if value is None:
            raise self.error("exponent must be an integer constant", start if start.kind != "end" else caret)
        return Pow(base, value)

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Const(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            if tok.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Unary(tok.text, arg)
            m = _THETA_RE.fullmatch(tok.text)
            if m is None:
                raise self.error(f"unknown identifier {tok.text!r}", tok)
            index = int(m.group(1) or 1)
            if index > self.d:
                raise self.error(
                    f"parameter index out of range: {tok.text} with d={self.d}", tok
                )
            return Param(index)
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        found = tok.text or "end of input"
        raise self.error(f"unexpected {found!r}")


def _fold_integer(node: Expr) -> int | None:
    """Value of a parameter-free integer-valued subtree, else None."""
    try:
        value = _eval(node, ())
    except (ExprEvalError, IndexError, OverflowError, ValueError):
        return None
    if not math.isfinite(value) or value != int(value):
        return None
    return int(value)


def parse_expr(text: str, d: int = 1) -> Expr:
    """Parse ``text`` into an immutable expression tree over ``d`` parameters.

    Raises
    ------
    ExprSyntaxError
        On malformed text, unknown identifiers, a parameter index above
        ``d`` or a non-integer exponent. ``.offset`` locates the fault.
    """
    if d < 1:
        raise ValueError("parameter count d must be >= 1")
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, text)
    return _Parser(text, d).parse()


# --------------------------------------------------------------------------
# Evaluation


def eval_expr(node: Expr, theta: Sequence[float] | float) -> float:
    """Evaluate ``node`` at the parameter vector ``theta`` in double precision."""
    if isinstance(theta, (int, float)):
        theta = (float(theta),)
    return _eval(node, tuple(theta))


def _eval(node: Expr, theta: tuple) -> float:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Param):
        if node.index > len(theta):
            raise IndexError(f"theta{node.index} requested but theta has {len(theta)} components")
        return float(theta[node.index - 1])
    if isinstance(node, Unary):
        x = _eval(node.arg, theta)
        if node.op == "neg":
            return -x
        if node.op == "sqrt" and x < 0:
            raise ExprEvalError(f"sqrt of negative value {x!r}", theta)
        try:
            return float(FUNCTIONS[node.op](x))
        except OverflowError:
            raise ExprEvalError(f"overflow in {node.op}({x!r})", theta) from None
    if isinstance(node, Binary):
        a = _eval(node.left, theta)
        b = _eval(node.right, theta)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0.0:
            raise ExprEvalError("division by zero", theta)
        return a / b
    if isinstance(node, Pow):
        x = _eval(node.base, theta)
        if node.exponent < 0 and x == 0.0:
            raise ExprEvalError("division by zero (negative power of 0)", theta)
        try:
            return float(x**node.exponent)
        except OverflowError:
            raise ExprEvalError(f"overflow in power {x!r}^{node.exponent}", theta) from None
    raise TypeError(f"not an expression node: {node!r}")


# --------------------------------------------------------------------------
# Printing and helpers


def to_text(node: Expr) -> str:
    """Fully parenthesised text that parses back to the same tree."""
    if isinstance(node, Const):
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            return f"(-{_num(-node.value)})"
        return _num(node.value)
    if isinstance(node, Param):
        return f"theta{node.index}"
    if isinstance(node, Unary):
        if node.op == "neg":
            return f"(-{to_text(node.arg)})"
        return f"{node.op}({to_text(node.arg)})"
    if isinstance(node, Binary):
        return f"({to_text(node.left)} {node.op} {to_text(node.right)})"
    if isinstance(node, Pow):
        exp = str(node.exponent) if node.exponent >= 0 else f"(-{-node.exponent})"
        return f"({to_text(node.base)})^{exp}"
    raise TypeError(f"not an expression node: {node!r}")


def _num(x: float) -> str:
    text = repr(float(x))
    if text in ("inf", "nan"):
        raise ValueError(f"cannot print non-finite constant {x}")
    return text


def max_param_index(node: Expr) -> int:
    """Largest parameter index referenced (0 for constant trees)."""
    if isinstance(node, Param):
        return node.index
    if isinstance(node, Const):
        return 0
    if isinstance(node, Unary):
        return max_param_index(node.arg)
    if isinstance(node, Binary):
        return max(max_param_index(node.left), max_param_index(node.right))
    return max_param_index(node.base)


def const(x: float) -> Const:
    return Const(float(x))


def _is_zero(node: Expr) -> bool:
    return isinstance(node, Const) and node.value == 0.0


def _is_one(node: Expr) -> bool:
    return isinstance(node, Const) and node.value == 1.0


def add(a: Expr, b: Expr) -> Expr:
    """Sum with exact zero elimination (keeps assembled trees small)."""
    if _is_zero(a):
        return b
    if _is_zero(b):
        return a
    return Binary("+", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    """Product with exact zero/one elimination."""
    if _is_zero(a) or _is_zero(b):
        return Const(0.0)
    if _is_one(a):
        return b
    if _is_one(b):
        return a
    return Binary("*", a, b)
