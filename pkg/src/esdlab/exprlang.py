"""Scalar expression language for model functions.

Model rates such as ``R(x, S)`` or ``Q(S, rho)`` are given as text, parsed
into an immutable AST, evaluated (scalar or numpy-vectorised) and
differentiated symbolically.

Grammar, lowest to highest precedence::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := atom ('^' intexp)*
    atom    := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'
    intexp  := ['-'|'+'] INT | '(' ['-'|'+'] INT ')'

so ``-x^2`` is ``-(x^2)``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

VARIABLES = ("x", "S", "rho")
FUNCTIONS = ("exp", "log", "sqrt", "abs", "sin", "cos", "tanh")

Number = Union[float, np.ndarray]


class ParseError(ValueError):
    """Syntax error with a 0-based byte offset into the UTF-8 input."""

    def __init__(self, message: str, offset: int, token: str = ""):
        self.message = message
        self.offset = offset
        self.token = token
        where = f" near {token!r}" if token else ""
        super().__init__(f"{message} at byte {offset}{where}")


class EvaluationError(ArithmeticError):
    """Unbound variable or a domain error (log/sqrt of a negative, x/0)."""


# --------------------------------------------------------------------------
# AST


class Expression:
    """Base class of all AST nodes. Nodes are frozen dataclasses."""

    __slots__ = ()

    def variables(self) -> frozenset:
        return frozenset()

    def __str__(self) -> str:
        return to_text(self)

    def __call__(self, **bindings) -> Number:
        return evaluate(self, bindings)


@dataclass(frozen=True)
class Const(Expression):
    value: float


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")

    def variables(self) -> frozenset:
        return frozenset((self.name,))


@dataclass(frozen=True)
class Neg(Expression):
    operand: Expression

    def variables(self) -> frozenset:
        return self.operand.variables()


@dataclass(frozen=True)
class BinOp(Expression):
    op: str  # one of + - * /
    left: Expression
    right: Expression

    def variables(self) -> frozenset:
        return self.left.variables() | self.right.variables()


@dataclass(frozen=True)
class Pow(Expression):
    base: Expression
    exponent: int

    def variables(self) -> frozenset:
        return self.base.variables()


@dataclass(frozen=True)
class Call(Expression):
    func: str
    arg: Expression

    def __post_init__(self):
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")

    def variables(self) -> frozenset:
        return self.arg.variables()


ZERO = Const(0.0)
ONE = Const(1.0)


# --------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num, name, op, end
    text: str
    offset: int  # byte offset


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    byte = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError("unexpected character", byte, text[pos])
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), byte))
        byte += len(m.group().encode("utf-8"))
        pos = m.end()
    tokens.append(_Token("end", "", byte))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        if self.tok.text != text:
            if self.tok.kind == "end":
                raise ParseError(f"expected {text!r}, got end of input", self.tok.offset)
            raise ParseError(f"expected {text!r}", self.tok.offset, self.tok.text)
        return self.advance()

    def parse(self) -> Expression:
        if self.tok.kind == "end":
            raise ParseError("empty expression", 0)
        e = self.expr()
        if self.tok.kind != "end":
            msg = "unbalanced ')'" if self.tok.text == ")" else "unexpected token"
            raise ParseError(msg, self.tok.offset, self.tok.text)
        return e

    def expr(self) -> Expression:
        left = self.term()
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expression:
        left = self.unary()
        while self.tok.text in ("*", "/"):
            op = self.advance().text
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expression:
        if self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        while self.tok.text == "^":
            self.advance()
            base = Pow(base, self.int_exponent())
        return base

    def int_exponent(self) -> int:
        paren = self.tok.text == "("
        if paren:
            self.advance()
        sign = 1
        if self.tok.text in ("-", "+"):
            sign = -1 if self.advance().text == "-" else 1
        t = self.tok
        if t.kind != "num":
            raise ParseError("exponent must be an integer literal", t.offset, t.text)
        if not t.text.isdigit():
            raise ParseError("non-integer exponent", t.offset, t.text)
        self.advance()
        if paren:
            self.expect(")")
        return sign * int(t.text)

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "name":
            self.advance()
            if t.text in VARIABLES:
                return Var(t.text)
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            raise ParseError("unknown identifier", t.offset, t.text)
        if t.text == "(":
            self.advance()
            e = self.expr()
            if self.tok.text != ")":
                if self.tok.kind == "end":
                    raise ParseError("unbalanced '('", t.offset, "(")
                raise ParseError("expected ')'", self.tok.offset, self.tok.text)
            self.advance()
            return e
        if t.kind == "end":
            raise ParseError("unexpected end of input", t.offset)
        raise ParseError("unexpected token", t.offset, t.text)


def parse(text: str) -> Expression:
    """Parse ``text`` into an expression; raise :class:`ParseError` on bad input."""
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# Printing


def _num(v: float) -> str:
    s = repr(float(v))
    if s in ("inf", "-inf", "nan"):
        raise ValueError(f"cannot print non-finite constant {s}")
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_text(e: Expression) -> str:
    """Fully parenthesised text form; re-parses to the same AST."""
    if isinstance(e, Const):
        return _num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Pow):
        exp = str(e.exponent) if e.exponent >= 0 else f"({e.exponent})"
        return f"({to_text(e.base)}^{exp})"
    if isinstance(e, Call):
        return f"{e.func}({to_text(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Evaluation


def _check_domain(func: str, arg):
    a = np.asarray(arg)
    if func == "log" and np.any(a <= 0):
        raise EvaluationError(f"log of non-positive value (min {a.min()!r})")
    if func == "sqrt" and np.any(a < 0):
        raise EvaluationError(f"sqrt of negative value (min {a.min()!r})")


def _divide(a, b):
    if np.any(np.asarray(b) == 0):
        raise EvaluationError("division by zero")
    return a / b


def _power(a, k: int):
    if k < 0:
        if np.any(np.asarray(a) == 0):
            raise EvaluationError("zero raised to a negative power")
        return 1.0 / a ** (-k)
    return a**k


_NP_FUNCS = {
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
}

_BINOPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _divide,
}


def evaluate(e: Expression, bindings: Mapping[str, Number]) -> Number:
    """Evaluate ``e`` with IEEE double arithmetic.

    Bindings may be floats or numpy arrays (broadcast together). Domain
    violations raise :class:`EvaluationError` rather than producing NaN.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {e.name!r}") from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, bindings)
    if isinstance(e, BinOp):
        return _BINOPS[e.op](evaluate(e.left, bindings), evaluate(e.right, bindings))
    if isinstance(e, Pow):
        return _power(evaluate(e.base, bindings), e.exponent)
    if isinstance(e, Call):
        arg = evaluate(e.arg, bindings)
        _check_domain(e.func, arg)
        with np.errstate(over="ignore"):
            return _NP_FUNCS[e.func](arg)
    raise TypeError(f"not an expression node: {e!r}")


def compile_expr(e: Expression) -> Callable[..., Number]:
    """Return ``f(x=0.0, S=0.0, rho=0.0)`` evaluating ``e``.

    Same arithmetic as :func:`evaluate` but the tree walk is done once, so
    the closure is cheap enough to call every time step.
    """
    fn = _compile(e)

    def f(x=0.0, S=0.0, rho=0.0):
        return fn({"x": x, "S": S, "rho": rho})

    f.expression = e
    return f


def _compile(e: Expression):
    if isinstance(e, Const):
        v = e.value
        return lambda env: v
    if isinstance(e, Var):
        name = e.name
        return lambda env: env[name]
    if isinstance(e, Neg):
        f = _compile(e.operand)
        return lambda env: -f(env)
    if isinstance(e, BinOp):
        fl, fr = _compile(e.left), _compile(e.right)
        if e.op == "+":
            return lambda env: fl(env) + fr(env)
        if e.op == "-":
            return lambda env: fl(env) - fr(env)
        if e.op == "*":
            return lambda env: fl(env) * fr(env)
        return lambda env: _divide(fl(env), fr(env))
    if isinstance(e, Pow):
        fb, k = _compile(e.base), e.exponent
        if k == 2:
            def sq(env):
                b = fb(env)
                return b * b
            return sq
        return lambda env: _power(fb(env), k)
    if isinstance(e, Call):
        fa, func = _compile(e.arg), e.func
        npf = _NP_FUNCS[func]
        if func in ("log", "sqrt"):
            def checked(env):
                a = fa(env)
                _check_domain(func, a)
                return npf(a)
            return checked
        return lambda env: npf(fa(env))
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# Simplification and differentiation


def _is_const(e, value=None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def add(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if _is_const(a, -1.0):
        return neg(b)
    if _is_const(b, -1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 1.0):
        return a
    if _is_const(a, 0.0) and not _is_const(b, 0.0):
        return ZERO
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def power(a: Expression, k: int) -> Expression:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if _is_const(a) and (a.value != 0.0 or k > 0):
        return Const(float(a.value**k))
    return Pow(a, k)


def simplify(e: Expression) -> Expression:
    """Constant folding and identity elimination, bottom-up."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return neg(simplify(e.operand))
    if isinstance(e, BinOp):
        a, b = simplify(e.left), simplify(e.right)
        return {"+": add, "-": sub, "*": mul, "/": div}[e.op](a, b)
    if isinstance(e, Pow):
        return power(simplify(e.base), e.exponent)
    if isinstance(e, Call):
        arg = simplify(e.arg)
        if isinstance(arg, Const) and e.func in ("exp", "abs", "sin", "cos", "tanh"):
            return Const(float(_NP_FUNCS[e.func](arg.value)))
        return Call(e.func, arg)
    raise TypeError(f"not an expression node: {e!r}")


def _d(e: Expression, v: str) -> Expression:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if v not in e.variables():
        return ZERO
    if isinstance(e, Neg):
        return neg(_d(e.operand, v))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = _d(a, v), _d(b, v)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        # quotient rule
        return div(sub(mul(da, b), mul(a, db)), power(b, 2))
    if isinstance(e, Pow):
        k = e.exponent
        return mul(mul(Const(float(k)), power(e.base, k - 1)), _d(e.base, v))
    if isinstance(e, Call):
        u = e.arg
        du = _d(u, v)
        outer = {
            "exp": lambda: e,
            "log": lambda: div(ONE, u),
            "sqrt": lambda: div(ONE, mul(Const(2.0), e)),
            "abs": lambda: div(u, e),
            "sin": lambda: Call("cos", u),
            "cos": lambda: neg(Call("sin", u)),
            "tanh": lambda: sub(ONE, power(e, 2)),
        }[e.func]()
        return mul(outer, du)
    raise TypeError(f"not an expression node: {e!r}")


def differentiate(e: Expression, v: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to variable ``v``."""
    if v not in VARIABLES:
        raise ValueError(f"unknown variable {v!r}")
    return simplify(_d(e, v))
