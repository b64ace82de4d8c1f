"""Symbolic expressions of one variable over the complex numbers.

A tiny expression language used to describe magnetic field components and
effective potentials: closed trees built from the variable ``s``, real
numeric literals, arithmetic, and a fixed set of analytic functions.  The
module provides parsing from source text, evaluation (in double or
arbitrary precision), exact symbolic differentiation, and deterministic
formatting that round-trips through the parser.

Grammar (no implicit multiplication, no imaginary literal)::

    expr   := term  (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ['^' unary]          # right-associative
    atom   := NUMBER | 's' | NAME '(' expr ')' | '(' expr ')'

``^`` binds tighter than unary minus, so ``-s^2`` is ``-(s^2)``.
"""

from __future__ import annotations

import cmath
import re
from dataclasses import dataclass

import mpmath

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "EvalDomainError",
    "FUNCTIONS",
    "POLE_TOLERANCE",
    "parse",
    "evaluate",
    "differentiate",
    "format_expr",
    "compile_expr",
]

#: Names accepted in call position, each of arity one.
FUNCTIONS = ("exp", "log", "sin", "cos", "tan", "sinh", "cosh", "tanh", "sqrt")

#: Divisors and logarithm arguments smaller than this in modulus are poles.
POLE_TOLERANCE = 1e-300


class ExprError(Exception):
    """Base class for expression language failures."""


class ExprSyntaxError(ExprError):
    """Source text rejected by the parser.

    Attributes
    ----------
    offset:
        Byte offset into the source where the failure was detected.
    expected:
        Frozen set of human-readable token descriptions that would have
        been accepted at that offset.
    """

    def __init__(self, message: str, offset: int, expected: frozenset[str]):
        super().__init__(f"{message} at offset {offset}; expected one of: "
                         f"{', '.join(sorted(expected))}")
        self.offset = offset
        self.expected = expected


class EvalDomainError(ExprError):
    """Evaluation hit a pole or a branch-point singularity."""


@dataclass(frozen=True)
class Const:
    value: complex


@dataclass(frozen=True)
class Var:
    """The single free variable ``s``."""


@dataclass(frozen=True)
class Neg:
    arg: "Expr"


@dataclass(frozen=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Div:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Pow:
    base: "Expr"
    exponent: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"

    def __post_init__(self) -> None:
        if self.func not in FUNCTIONS:
            raise ValueError(f"unknown function {self.func!r}")


Expr = Const | Var | Neg | Add | Sub | Mul | Div | Pow | Call


# --------------------------------------------------------------------------
# Parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_ATOM_EXPECTED = frozenset({"number", "'s'", "function name", "'('", "'-'"})


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    offset: int


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None or match.lastgroup is None:
            # Skip over trailing whitespace before declaring a bad character.
            stripped = source[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(source) - len(stripped)
            raise ExprSyntaxError("unexpected character", bad_at, _ATOM_EXPECTED)
        kind = match.lastgroup
        tokens.append(_Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def _fail(self, expected: frozenset[str]) -> ExprSyntaxError:
        token = self.current
        what = "unexpected end of input" if token.kind == "end" else (
            f"unexpected token {token.text!r}")
        return ExprSyntaxError(what, token.offset, expected)

    def parse(self) -> Expr:
        node = self._expr()
        if self.current.kind != "end":
            raise self._fail(frozenset(
                {"'+'", "'-'", "'*'", "'/'", "'^'", "end of input"}))
        return node

    def _expr(self) -> Expr:
        node = self._term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self._advance().text
            rhs = self._term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def _term(self) -> Expr:
        node = self._unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self._advance().text
            rhs = self._unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def _unary(self) -> Expr:
        if self.current.kind == "op" and self.current.text == "-":
            self._advance()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expr:
        base = self._atom()
        if self.current.kind == "op" and self.current.text == "^":
            self._advance()
            # Right-associative; the exponent may carry its own unary minus.
            return Pow(base, self._unary())
        return base

    def _atom(self) -> Expr:
        token = self.current
        if token.kind == "num":
            self._advance()
            return Const(float(token.text))
        if token.kind == "name":
            self._advance()
            if token.text == "s":
                return Var()
            if token.text in FUNCTIONS:
                self._expect_op("(")
                arg = self._expr()
                self._expect_op(")")
                return Call(token.text, arg)
            raise ExprSyntaxError(
                f"unknown identifier {token.text!r}", token.offset,
                frozenset({"'s'", "function name"}))
        if token.kind == "op" and token.text == "(":
            self._advance()
            node = self._expr()
            self._expect_op(")")
            return node
        raise self._fail(_ATOM_EXPECTED)

    def _expect_op(self, op: str) -> None:
        token = self.current
        if token.kind == "op" and token.text == op:
            self._advance()
            return
        raise self._fail(frozenset({f"'{op}'"}))


def parse(source: str) -> Expr:
    """Parse source text into an expression tree.

    Raises
    ------
    ExprSyntaxError
        With the byte offset of the failure and the set of token kinds
        that would have been accepted there.
    """
    return _Parser(source).parse()


# --------------------------------------------------------------------------
# Evaluation

def _is_mp(value: object) -> bool:
    return isinstance(value, (mpmath.mpf, mpmath.mpc))


def evaluate(expr: Expr, s: complex | mpmath.mpf | mpmath.mpc):
    """Evaluate ``expr`` at the point ``s``.

    The numeric backend follows the type of ``s``: Python ints, floats and
    complexes evaluate through :mod:`cmath` and return ``complex``; mpmath
    numbers evaluate through :mod:`mpmath` at the active working precision.

    Raises
    ------
    EvalDomainError
        On division by a value of modulus below :data:`POLE_TOLERANCE`,
        logarithm of (numerical) zero, or a negative power of zero.
    """
    if _is_mp(s):
        return _eval(expr, s, mpmath, mpmath.mpc)
    return _eval(expr, complex(s), cmath, complex)


def _eval(expr: Expr, s, lib, cast):
    if isinstance(expr, Const):
        return cast(expr.value)
    if isinstance(expr, Var):
        return s
    if isinstance(expr, Neg):
        return -_eval(expr.arg, s, lib, cast)
    if isinstance(expr, Add):
        return _eval(expr.left, s, lib, cast) + _eval(expr.right, s, lib, cast)
    if isinstance(expr, Sub):
        return _eval(expr.left, s, lib, cast) - _eval(expr.right, s, lib, cast)
    if isinstance(expr, Mul):
        return _eval(expr.left, s, lib, cast) * _eval(expr.right, s, lib, cast)
    if isinstance(expr, Div):
        num = _eval(expr.left, s, lib, cast)
        den = _eval(expr.right, s, lib, cast)
        if abs(den) < POLE_TOLERANCE:
            raise EvalDomainError(f"division by {den} at s={s}")
        return num / den
    if isinstance(expr, Pow):
        base = _eval(expr.base, s, lib, cast)
        power = _eval(expr.exponent, s, lib, cast)
        return _pow(base, power, s)
    if isinstance(expr, Call):
        arg = _eval(expr.arg, s, lib, cast)
        if expr.func == "log" and abs(arg) < POLE_TOLERANCE:
            raise EvalDomainError(f"logarithm of {arg} at s={s}")
        return getattr(lib, expr.func)(arg)
    raise TypeError(f"not an expression node: {expr!r}")


def _pow(base, power, s):
    # Integer exponents stay exact and single-valued; everything else takes
    # the principal branch of the backend's power.
    as_int = _int_exponent(power)
    if as_int is not None:
        if as_int < 0 and abs(base) < POLE_TOLERANCE:
            raise EvalDomainError(f"negative power of {base} at s={s}")
        return base ** as_int
    if abs(base) < POLE_TOLERANCE and _real_part(power) < 0:
        raise EvalDomainError(f"negative power of {base} at s={s}")
    return base ** power


def _int_exponent(power) -> int | None:
    if isinstance(power, (mpmath.mpf, mpmath.mpc)):
        real = mpmath.re(power)
        if mpmath.im(power) == 0 and real == mpmath.floor(real):
            return int(real)
        return None
    if isinstance(power, complex):
        if power.imag == 0 and float(power.real).is_integer():
            return int(power.real)
        return None
    if isinstance(power, (int, float)) and float(power).is_integer():
        return int(power)
    return None


def _real_part(value) -> float:
    if isinstance(value, (mpmath.mpf, mpmath.mpc)):
        return float(mpmath.re(value))
    return complex(value).real


# --------------------------------------------------------------------------
# Differentiation

def differentiate(expr: Expr) -> Expr:
    """Exact derivative of ``expr`` with respect to ``s``.

    The result is a plain expression tree; only identity-level folding
    (adding zero, multiplying by one) is applied to keep trees compact.
    """
    if isinstance(expr, Const):
        return Const(0.0)
    if isinstance(expr, Var):
        return Const(1.0)
    if isinstance(expr, Neg):
        return _neg(differentiate(expr.arg))
    if isinstance(expr, Add):
        return _add(differentiate(expr.left), differentiate(expr.right))
    if isinstance(expr, Sub):
        return _sub(differentiate(expr.left), differentiate(expr.right))
    if isinstance(expr, Mul):
        return _add(_mul(differentiate(expr.left), expr.right),
                    _mul(expr.left, differentiate(expr.right)))
    if isinstance(expr, Div):
        num = _sub(_mul(differentiate(expr.left), expr.right),
                   _mul(expr.left, differentiate(expr.right)))
        return _div(num, Pow(expr.right, Const(2.0)))
    if isinstance(expr, Pow):
        base, power = expr.base, expr.exponent
        dbase = differentiate(base)
        if isinstance(power, Const):
            # d/ds b^n = n b^(n-1) b'
            return _mul(_mul(power, Pow(base, Const(power.value - 1))), dbase)
        # General case through b^p = exp(p log b).
        dpower = differentiate(power)
        bracket = _add(_mul(dpower, Call("log", base)),
                       _mul(power, _div(dbase, base)))
        return _mul(expr, bracket)
    if isinstance(expr, Call):
        inner = differentiate(expr.arg)
        outer = _CHAIN_RULES[expr.func](expr.arg)
        return _mul(outer, inner)
    raise TypeError(f"not an expression node: {expr!r}")


_CHAIN_RULES = {
    "exp": lambda a: Call("exp", a),
    "log": lambda a: _div(Const(1.0), a),
    "sin": lambda a: Call("cos", a),
    "cos": lambda a: _neg(Call("sin", a)),
    "tan": lambda a: _add(Const(1.0), Pow(Call("tan", a), Const(2.0))),
    "sinh": lambda a: Call("cosh", a),
    "cosh": lambda a: Call("sinh", a),
    "tanh": lambda a: _sub(Const(1.0), Pow(Call("tanh", a), Const(2.0))),
    "sqrt": lambda a: _div(Const(0.5), Call("sqrt", a)),
}


def _is_const(expr: Expr, value: float) -> bool:
    return isinstance(expr, Const) and expr.value == value


def _neg(a: Expr) -> Expr:
    return Const(0.0) if _is_const(a, 0.0) else Neg(a)


def _add(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return _neg(b)
    return Sub(a, b)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return Const(0.0)
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is_const(a, 0.0):
        return Const(0.0)
    if _is_const(b, 1.0):
        return a
    return Div(a, b)


# --------------------------------------------------------------------------
# Formatting

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def format_expr(expr: Expr) -> str:
    """Render ``expr`` as source text that parses back to the same tree.

    Structural round-tripping holds for trees in the parser's range, where
    every constant is a non-negative real.  Negative constants (possible
    only in programmatically built trees) render with a leading minus and
    re-parse as a negation node; constants with a nonzero imaginary part
    are rejected since the grammar has no imaginary literal.
    """
    return _format(expr, 0)


def _format(expr: Expr, need: int) -> str:
    if isinstance(expr, Const):
        value = expr.value
        if isinstance(value, complex):
            if value.imag != 0:
                raise ValueError(f"cannot format complex constant {value!r}")
            value = value.real
        text = repr(int(value)) if float(value).is_integer() else repr(float(value))
        return f"({text})" if value < 0 and need > _PREC_UNARY else text
    if isinstance(expr, Var):
        return "s"
    if isinstance(expr, Neg):
        return _wrap(f"-{_format(expr.arg, _PREC_UNARY)}", _PREC_UNARY, need)
    if isinstance(expr, Add):
        body = f"{_format(expr.left, _PREC_ADD)}+{_format(expr.right, _PREC_ADD + 1)}"
        return _wrap(body, _PREC_ADD, need)
    if isinstance(expr, Sub):
        body = f"{_format(expr.left, _PREC_ADD)}-{_format(expr.right, _PREC_ADD + 1)}"
        return _wrap(body, _PREC_ADD, need)
    if isinstance(expr, Mul):
        body = f"{_format(expr.left, _PREC_MUL)}*{_format(expr.right, _PREC_MUL + 1)}"
        return _wrap(body, _PREC_MUL, need)
    if isinstance(expr, Div):
        body = f"{_format(expr.left, _PREC_MUL)}/{_format(expr.right, _PREC_MUL + 1)}"
        return _wrap(body, _PREC_MUL, need)
    if isinstance(expr, Pow):
        body = f"{_format(expr.base, _PREC_ATOM)}^{_format(expr.exponent, _PREC_UNARY)}"
        return _wrap(body, _PREC_POW, need)
    if isinstance(expr, Call):
        return f"{expr.func}({_format(expr.arg, 0)})"
    raise TypeError(f"not an expression node: {expr!r}")


def _wrap(body: str, prec: int, need: int) -> str:
    return body if prec >= need else f"({body})"


# --------------------------------------------------------------------------
# Compilation

def compile_expr(expr: Expr):
    """Compile ``expr`` to a fast callable ``fn(s, lib)``.

    ``lib`` is the function backend (:mod:`cmath` or :mod:`mpmath`); the
    caller is responsible for passing ``s`` of the matching kind.  Raises
    the same :class:`EvalDomainError` as :func:`evaluate` at poles.
    """
    source = _codegen(expr)
    code = compile(source, "<expr>", "eval")
    def fn(s, lib=cmath, _code=code):
        return eval(_code, {"__builtins__": {}},
                    {"s": s, "lib": lib, "_div": _guarded_div, "_log": _guarded_log})
    return fn


def _guarded_div(num, den):
    if abs(den) < POLE_TOLERANCE:
        raise EvalDomainError(f"division by {den}")
    return num / den


def _guarded_log(lib, arg):
    if abs(arg) < POLE_TOLERANCE:
        raise EvalDomainError(f"logarithm of {arg}")
    return lib.log(arg)


def _codegen(expr: Expr) -> str:
    if isinstance(expr, Const):
        value = expr.value
        if isinstance(value, complex) and value.imag != 0:
            return f"({value.real!r}+{value.imag!r}*1j)"
        return repr(float(value.real if isinstance(value, complex) else value))
    if isinstance(expr, Var):
        return "s"
    if isinstance(expr, Neg):
        return f"(-{_codegen(expr.arg)})"
    if isinstance(expr, Add):
        return f"({_codegen(expr.left)}+{_codegen(expr.right)})"
    if isinstance(expr, Sub):
        return f"({_codegen(expr.left)}-{_codegen(expr.right)})"
    if isinstance(expr, Mul):
        return f"({_codegen(expr.left)}*{_codegen(expr.right)})"
    if isinstance(expr, Div):
        return f"_div({_codegen(expr.left)},{_codegen(expr.right)})"
    if isinstance(expr, Pow):
        exponent = expr.exponent
        if isinstance(exponent, Const):
            as_int = _int_exponent(exponent.value)
            if as_int is not None:
                if as_int >= 0:
                    return f"({_codegen(expr.base)}**{as_int})"
                return f"_div(1.0,{_codegen(expr.base)}**{-as_int})"
        return f"({_codegen(expr.base)}**{_codegen(exponent)})"
    if isinstance(expr, Call):
        if expr.func == "log":
            return f"_log(lib,{_codegen(expr.arg)})"
        return f"lib.{expr.func}({_codegen(expr.arg)})"
    raise TypeError(f"not an expression node: {expr!r}")
