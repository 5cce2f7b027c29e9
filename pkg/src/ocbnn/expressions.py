"""Tiny arithmetic expression grammar for constraint files.

Expressions are written over the input coordinates ``x_1 .. x_Q``, the
output ``y``, numeric literals, and the constants ``pi``, ``e``, ``inf``.
Supported operators: ``+ - * / ^`` (with unary minus, ``^`` right
associative) and the one-argument functions ``sin cos exp log sqrt tanh
abs``. Evaluation broadcasts over numpy arrays, and expressions can be
differentiated symbolically with respect to ``y`` (needed for gradients of
inequality-based priors).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np


class ExpressionError(ValueError):
    pass


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)

_CONSTANTS = {"pi": np.pi, "e": np.e, "inf": np.inf}

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "tanh": np.tanh,
    "abs": np.abs,
}


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str  # "y" or "x_<i>"


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class Bin:
    op: str  # + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Node"


Node = Union[Num, Var, Neg, Bin, Call]


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExpressionError(f"cannot tokenize {text[pos:]!r} in {text!r}")
        pos = m.end()
        tok = m.group("num") or m.group("ident") or m.group("op")
        tokens.append("^" if tok == "**" else tok)
    return tokens


class _Parser:
    def __init__(self, tokens: list[str], text: str):
        self.tokens = tokens
        self.text = text
        self.pos = 0

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ExpressionError(f"unexpected end of expression in {self.text!r}")
        self.pos += 1
        return tok

    def expect(self, tok: str) -> None:
        got = self.take()
        if got != tok:
            raise ExpressionError(f"expected {tok!r}, got {got!r} in {self.text!r}")

    def parse(self) -> Node:
        node = self.expr()
        if self.peek() is not None:
            raise ExpressionError(f"trailing tokens {self.tokens[self.pos:]} in {self.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = Bin(op, node, self.factor())
        return node

    def factor(self) -> Node:
        if self.peek() == "-":
            self.take()
            return Neg(self.factor())
        node = self.primary()
        if self.peek() == "^":
            self.take()
            node = Bin("^", node, self.factor())
        return node

    def primary(self) -> Node:
        tok = self.take()
        if tok == "(":
            node = self.expr()
            self.expect(")")
            return node
        if re.fullmatch(r"\d.*|\..*", tok):
            return Num(float(tok))
        if tok in _CONSTANTS:
            return Num(float(_CONSTANTS[tok]))
        if tok in _FUNCTIONS:
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(tok, arg)
        if tok == "y":
            return Var(tok)
        if re.fullmatch(r"x_\d+", tok):
            if int(tok[2:]) < 1:
                raise ExpressionError(f"input coordinates are 1-based, got {tok!r}")
            return Var(tok)
        raise ExpressionError(f"unknown identifier {tok!r} in {self.text!r}")


def parse(text: str) -> Node:
    return _Parser(_tokenize(text), text).parse()


def evaluate(node: Node, x: np.ndarray | None = None, y=None):
    """Evaluate at input vector/matrix ``x`` and output ``y``.

    ``x`` may be a single (Q,) vector or a (T, Q) matrix; ``y`` a scalar or a
    length-T vector. Arrays broadcast through every operation.
    """
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name == "y":
            if y is None:
                raise ExpressionError("expression uses y but no output was supplied")
            return y
        idx = int(node.name[2:]) - 1
        if x is None:
            raise ExpressionError(f"expression uses {node.name} but no input was supplied")
        arr = np.asarray(x, dtype=np.float64)
        if idx < 0 or idx >= arr.shape[-1]:
            raise ExpressionError(f"{node.name} is out of range for {arr.shape[-1]} inputs")
        return arr[..., idx]
    if isinstance(node, Neg):
        return -evaluate(node.arg, x, y)
    if isinstance(node, Call):
        return _FUNCTIONS[node.fn](evaluate(node.arg, x, y))
    a = evaluate(node.left, x, y)
    b = evaluate(node.right, x, y)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    with np.errstate(divide="ignore", invalid="ignore"):
        if node.op == "/":
            return np.divide(a, b)
        return np.power(a, b)


def uses_y(node: Node) -> bool:
    if isinstance(node, Var):
        return node.name == "y"
    if isinstance(node, Num):
        return False
    if isinstance(node, (Neg, Call)):
        return uses_y(node.arg)
    return uses_y(node.left) or uses_y(node.right)


def diff_y(node: Node) -> Node:
    """Symbolic derivative with respect to ``y``."""
    if isinstance(node, Num):
        return Num(0.0)
    if isinstance(node, Var):
        return Num(1.0) if node.name == "y" else Num(0.0)
    if isinstance(node, Neg):
        return Neg(diff_y(node.arg))
    if isinstance(node, Call):
        inner = diff_y(node.arg)
        if node.fn == "sin":
            outer: Node = Call("cos", node.arg)
        elif node.fn == "cos":
            outer = Neg(Call("sin", node.arg))
        elif node.fn == "exp":
            outer = Call("exp", node.arg)
        elif node.fn == "log":
            outer = Bin("/", Num(1.0), node.arg)
        elif node.fn == "sqrt":
            outer = Bin("/", Num(0.5), Call("sqrt", node.arg))
        elif node.fn == "tanh":
            outer = Bin("-", Num(1.0), Bin("^", Call("tanh", node.arg), Num(2.0)))
        else:
            raise ExpressionError(f"abs() is not differentiable; rewrite the expression ({node.fn})")
        return Bin("*", outer, inner)
    if node.op in ("+", "-"):
        return Bin(node.op, diff_y(node.left), diff_y(node.right))
    if node.op == "*":
        return Bin(
            "+",
            Bin("*", diff_y(node.left), node.right),
            Bin("*", node.left, diff_y(node.right)),
        )
    if node.op == "/":
        num = Bin(
            "-",
            Bin("*", diff_y(node.left), node.right),
            Bin("*", node.left, diff_y(node.right)),
        )
        return Bin("/", num, Bin("^", node.right, Num(2.0)))
    # power: constant exponents only
    if uses_y(node.right):
        raise ExpressionError("cannot differentiate an expression with y in an exponent")
    down = Bin("^", node.left, Bin("-", node.right, Num(1.0)))
    return Bin("*", Bin("*", node.right, down), diff_y(node.left))


class Expression:
    """Parsed expression with cached y-derivative."""

    def __init__(self, text: str):
        self.text = text
        self.node = parse(text)
        self._dy: Node | None = None

    def __call__(self, x=None, y=None):
        return evaluate(self.node, x, y)

    def dy(self, x=None, y=None):
        if self._dy is None:
            self._dy = diff_y(self.node)
        return evaluate(self._dy, x, y)

    def uses_y(self) -> bool:
        return uses_y(self.node)

    def __repr__(self) -> str:
        return f"Expression({self.text!r})"
