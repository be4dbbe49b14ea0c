"""Arithmetic expressions for system right-hand sides.

The language is deliberately tiny: numbers, variables ``x1..xn``,
``u1..ur``, named parameters, ``+ - * / ^`` (``**`` is accepted as an
alias for ``^``), parentheses and ``sqrt(...)``.  Exponents must be numeric
constants.

Expressions can be evaluated on plain numbers (floats or ``mpmath.mpf``)
and on truncated Taylor series (:class:`TaylorJet`).  Every derivative the
synthesis needs is extracted from jets along a one-parameter curve, so no
symbolic differentiation happens anywhere.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import DivideByZero, DomainError, ExprSyntaxError, UnknownVariable

__all__ = [
    "Signature", "Expr", "Const", "Var", "Neg", "BinOp", "Pow", "Call",
    "TaylorJet", "DualJet", "parse_expr", "unparse", "eval_plain", "eval_jet",
    "evaluate", "variables",
]


# ---------------------------------------------------------------------------
# Truncated Taylor series
# ---------------------------------------------------------------------------

class TaylorJet:
    """Truncated power series ``c0 + c1*e + ... + c_order*e**order``.

    Coefficients live in a 1-D numpy array; ``dtype=object`` arrays holding
    ``mpmath.mpf`` values are supported for extended-precision work.
    """

    __slots__ = ("coeffs",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.dtype != object:
            c = c.astype(float)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("jet coefficients must be a non-empty 1-D sequence")
        self.coeffs = c

    @classmethod
    def constant(cls, value, order, dtype=float):
        c = np.zeros(order + 1, dtype=dtype)
        if dtype is object:
            c[:] = value * 0
        c[0] = value
        return cls(c)

    @classmethod
    def variable(cls, value, order, slope=1.0, dtype=float):
        jet = cls.constant(value, order, dtype)
        if order >= 1:
            jet.coeffs[1] = slope
        return jet

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __len__(self):
        return self.coeffs.size

    def __getitem__(self, k):
        return self.coeffs[k]

    def __repr__(self):
        return f"TaylorJet({list(self.coeffs)!r})"

    def __eq__(self, other):
        if not isinstance(other, TaylorJet):
            return NotImplemented
        return self.order == other.order and all(
            a == b for a, b in zip(self.coeffs, other.coeffs))

    __hash__ = None

    def _lift(self, other):
        if isinstance(other, TaylorJet):
            if other.order != self.order:
                raise ValueError("jets must share the same order")
            return other
        return TaylorJet.constant(other, self.order, self.coeffs.dtype if
                                  self.coeffs.dtype == object else float)

    def __add__(self, other):
        if not isinstance(other, TaylorJet):
            c = self.coeffs.copy()
            c[0] = c[0] + other
            return TaylorJet(c)
        return TaylorJet(self.coeffs + self._lift(other).coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, TaylorJet):
            c = self.coeffs.copy()
            c[0] = c[0] - other
            return TaylorJet(c)
        return TaylorJet(self.coeffs - self._lift(other).coeffs)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return TaylorJet(-self.coeffs)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if not isinstance(other, TaylorJet):
            return TaylorJet(self.coeffs * other)
        other = self._lift(other)
        return TaylorJet(np.convolve(self.coeffs, other.coeffs)[: self.order + 1])

    __rmul__ = __mul__

    def reciprocal(self):
        b = self.coeffs
        if b[0] == 0:
            raise ZeroDivisionError("jet with zero constant term is not invertible")
        q = np.empty_like(b)
        q[0] = 1 / b[0]
        for k in range(1, b.size):
            acc = b[1] * q[k - 1]
            for j in range(2, k + 1):
                acc = acc + b[j] * q[k - j]
            q[k] = -acc / b[0]
        return TaylorJet(q)

    def __truediv__(self, other):
        if not isinstance(other, TaylorJet):
            if other == 0:
                raise ZeroDivisionError("division of a jet by zero")
            return TaylorJet(self.coeffs / other)
        other = self._lift(other)
        a, b = self.coeffs, other.coeffs
        if b[0] == 0:
            raise ZeroDivisionError("divisor jet has zero constant term")
        q = np.empty_like(a if a.dtype == object else a.astype(float))
        for k in range(a.size):
            acc = a[k]
            for j in range(1, k + 1):
                acc = acc - b[j] * q[k - j]
            q[k] = acc / b[0]
        return TaylorJet(q)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def ipow(self, n: int) -> "TaylorJet":
        """Integer power by repeated squaring (negative ``n`` inverts)."""
        if n < 0:
            return self.reciprocal().ipow(-n)
        result = TaylorJet.constant(1, self.order, self.coeffs.dtype if
                                    self.coeffs.dtype == object else float)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def sqrt(self) -> "TaylorJet":
        a = self.coeffs
        if a[0] < 0:
            raise ValueError("square root of a jet with negative constant term")
        if a[0] == 0:
            if a.size == 1:
                return TaylorJet(a.copy())
            raise ValueError("square root of a jet with zero constant term")
        s = np.empty_like(a)
        s[0] = _scalar_sqrt(a[0])
        for k in range(1, a.size):
            acc = a[k]
            for j in range(1, k):
                acc = acc - s[j] * s[k - j]
            s[k] = acc / (2 * s[0])
        return TaylorJet(s)


class DualJet:
    """Jet carrying one extra first-order (nilpotent) direction.

    ``value`` is the series of ``g(curve(e))`` and ``tangent`` the series of
    the directional derivative of ``g`` along a fixed vector, taken at the
    same curve point.  Used to expand Jacobian columns along the shift curve.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value: TaylorJet, tangent: TaylorJet):
        self.value = value
        self.tangent = tangent

    def _lift(self, other):
        if isinstance(other, DualJet):
            return other
        if isinstance(other, TaylorJet):
            return DualJet(other, other * 0)
        v = TaylorJet.constant(other, self.value.order)
        return DualJet(v, v * 0)

    def __add__(self, other):
        o = self._lift(other)
        return DualJet(self.value + o.value, self.tangent + o.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return DualJet(self.value - o.value, self.tangent - o.tangent)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __neg__(self):
        return DualJet(-self.value, -self.tangent)

    def __mul__(self, other):
        o = self._lift(other)
        return DualJet(self.value * o.value,
                       self.tangent * o.value + self.value * o.tangent)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        q = self.value / o.value
        return DualJet(q, (self.tangent - q * o.tangent) / o.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def ipow(self, n: int) -> "DualJet":
        if n == 0:
            one = TaylorJet.constant(1.0, self.value.order)
            return DualJet(one, one * 0)
        p = self.value.ipow(n - 1)
        return DualJet(p * self.value, self.tangent * p * n)

    def sqrt(self) -> "DualJet":
        s = self.value.sqrt()
        return DualJet(s, self.tangent / (2 * s))


def _scalar_sqrt(v):
    if isinstance(v, (float, int, np.floating)):
        return math.sqrt(v)
    import mpmath
    return mpmath.sqrt(v)


# ---------------------------------------------------------------------------
# Parse tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Signature:
    """Names an expression may reference: ``x1..xn``, ``u1..ur`` and params."""

    n: int
    r: int
    params: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "params", frozenset(self.params))

    def resolves(self, name: str) -> bool:
        if name in self.params:
            return True
        m = _STATE_OR_INPUT.fullmatch(name)
        if not m:
            return False
        idx = int(m.group(2))
        limit = self.n if m.group(1) == "x" else self.r
        return 1 <= idx <= limit


_STATE_OR_INPUT = re.compile(r"([xu])([1-9][0-9]*)")


class Expr:
    """Base class of parse-tree nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr
    pos: int = field(default=0, compare=False)


_FUNCTIONS = {"sqrt"}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


@dataclass
class _Token:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(source: str):
    pos = 0
    size = len(source)
    while True:
        while pos < size and source[pos].isspace():
            pos += 1
        if pos >= size:
            yield _Token("end", "", size)
            return
        m = _TOKEN.match(source, pos)
        if not m or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if kind == "op" and text == "**":
            text = "^"
        yield _Token(kind, text, start)
        pos = m.end()


# binding powers; unary minus sits between * and ^
_BP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
_UNARY_BP = 25


class _Parser:
    def __init__(self, source: str, signature: Signature):
        self.source = source
        self.signature = signature
        self.tokens = _tokenize(source)
        self.tok = next(self.tokens)

    def advance(self):
        t = self.tok
        if t.kind != "end":
            self.tok = next(self.tokens)
        return t

    def expect(self, text):
        if self.tok.text != text:
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", self.tok.pos)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expression(0)
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {self.tok.text!r}", self.tok.pos)
        return node

    def expression(self, rbp: int) -> Expr:
        left = self.nud(self.advance())
        while self.tok.kind == "op" and rbp < _BP.get(self.tok.text, 0):
            left = self.led(self.advance(), left)
        return left

    def nud(self, t: _Token) -> Expr:
        if t.kind == "num":
            return Const(float(t.text))
        if t.kind == "name":
            if t.text in _FUNCTIONS:
                self.expect("(")
                arg = self.expression(0)
                self.expect(")")
                return Call(t.text, arg, t.pos)
            if not self.signature.resolves(t.text):
                raise UnknownVariable(t.text, t.pos)
            return Var(t.text, t.pos)
        if t.text == "(":
            inner = self.expression(0)
            self.expect(")")
            return inner
        if t.text == "-":
            return Neg(self.expression(_UNARY_BP))
        if t.text == "+":
            return self.expression(_UNARY_BP)
        if t.kind == "end":
            raise ExprSyntaxError("unexpected end of input", t.pos)
        raise ExprSyntaxError(f"unexpected token {t.text!r}", t.pos)

    def led(self, t: _Token, left: Expr) -> Expr:
        if t.text == "^":
            exp_pos = self.tok.pos
            exponent = self.expression(_BP["^"] - 1)  # right associative
            value = _constant_value(exponent)
            if value is None:
                raise ExprSyntaxError("exponent must be a numeric constant", exp_pos)
            return Pow(left, value, t.pos)
        right = self.expression(_BP[t.text])
        return BinOp(t.text, left, right, t.pos)


def _constant_value(node: Expr):
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        inner = _constant_value(node.operand)
        return None if inner is None else -inner
    if isinstance(node, Pow):
        # constant towers such as 3^2 in 2^3^2
        base = _constant_value(node.base)
        return None if base is None else base ** node.exponent
    return None


def parse_expr(source: str, signature: Signature) -> Expr:
    """Parse ``source`` against the variable ``signature``.

    Raises
    ------
    ExprSyntaxError
        Malformed input; ``offset`` is the character position of the fault.
    UnknownVariable
        An identifier that is neither a state, an input nor a parameter.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, signature).parse()


def unparse(e: Expr) -> str:
    """Render a tree back to text; binary operations are fully parenthesised."""
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{unparse(e.operand)})"
    if isinstance(e, BinOp):
        return f"({unparse(e.left)} {e.op} {unparse(e.right)})"
    if isinstance(e, Pow):
        exp = e.exponent
        text = repr(float(abs(exp)))
        return f"({unparse(e.base)} ^ {'-' if exp < 0 else ''}{text})"
    if isinstance(e, Call):
        return f"{e.func}({unparse(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def variables(e: Expr) -> set:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Neg,)):
        return variables(e.operand)
    if isinstance(e, BinOp):
        return variables(e.left) | variables(e.right)
    if isinstance(e, Pow):
        return variables(e.base)
    if isinstance(e, Call):
        return variables(e.arg)
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

Number = Union[float, "TaylorJet", "DualJet"]


def _power(base, exponent: float, pos: int):
    if float(exponent).is_integer():
        k = int(exponent)
        if isinstance(base, (TaylorJet, DualJet)):
            try:
                return base.ipow(k)
            except ZeroDivisionError as exc:
                raise DivideByZero(str(exc), pos) from None
        if k < 0 and base == 0:
            raise DivideByZero("zero raised to a negative power", pos)
        return base ** k
    if isinstance(base, (TaylorJet, DualJet)):
        raise DomainError("non-integer exponents are not supported on jets", pos)
    if base < 0:
        raise DomainError("negative base with non-integer exponent", pos)
    if base == 0 and exponent < 0:
        raise DivideByZero("zero raised to a negative power", pos)
    return base ** exponent


def evaluate(e: Expr, env: Mapping[str, Number]):
    """Evaluate ``e`` with variables bound in ``env``.

    Works for any value type supporting ``+ - * /`` plus, for jets,
    ``ipow`` and ``sqrt``.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnknownVariable(e.name, e.pos) from None
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    if isinstance(e, BinOp):
        a = evaluate(e.left, env)
        b = evaluate(e.right, env)
        op = e.op
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        try:
            if not isinstance(b, (TaylorJet, DualJet)) and b == 0:
                raise ZeroDivisionError("division by zero")
            return a / b
        except ZeroDivisionError as exc:
            raise DivideByZero(str(exc), e.pos) from None
    if isinstance(e, Pow):
        return _power(evaluate(e.base, env), e.exponent, e.pos)
    if isinstance(e, Call):
        v = evaluate(e.arg, env)
        try:
            if isinstance(v, (TaylorJet, DualJet)):
                return v.sqrt()
            if v < 0:
                raise ValueError("square root of a negative number")
            return _scalar_sqrt(v)
        except ValueError as exc:
            raise DomainError(str(exc), e.pos) from None
    raise TypeError(f"not an expression node: {e!r}")


def _bind(x: Sequence, u: Sequence, params: Mapping) -> dict:
    env = dict(params)
    for i, v in enumerate(x, start=1):
        env[f"x{i}"] = v
    for i, v in enumerate(u, start=1):
        env[f"u{i}"] = v
    return env


def eval_plain(e: Expr, x: Sequence[float], u: Sequence[float],
               params: Mapping[str, float] | None = None) -> float:
    """Evaluate on plain numbers (IEEE doubles, or mpmath values)."""
    return evaluate(e, _bind(x, u, params or {}))


def eval_jet(e: Expr, x: Sequence[TaylorJet], u: Sequence[TaylorJet],
             params: Mapping[str, float] | None = None, order: int | None = None) -> TaylorJet:
    """Evaluate on truncated Taylor jets sharing one order.

    Coefficient ``k`` of the result is ``1/k!`` times the ``k``-th derivative
    of the composed map along the jets' common parameter.
    """
    jets = [*x, *u]
    if order is None:
        order = jets[0].order if jets else 0
    for j in jets:
        if j.order != order:
            raise ValueError("all jets must share the same order")
    result = evaluate(e, _bind(x, u, params or {}))
    if not isinstance(result, TaylorJet):
        result = TaylorJet.constant(result, order)
    return result
