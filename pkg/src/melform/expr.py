"""Scalar expressions over phase coordinates, time and parameters.

Expressions are parsed from text into an immutable tree, differentiated
symbolically and either evaluated directly (with domain checking) or
compiled to a numpy function for use inside integrators.

Grammar (see ``docs/grammar.md``)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom ("^" unary)?          # right associative, exponent constant
    atom    := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "UndeclaredIdentifierError",
    "MissingBindingError",
    "DomainError",
    "Expression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "Pow",
    "parse",
    "differentiate",
    "evaluate",
    "to_source",
    "substitute",
    "free_names",
    "compile_numpy",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "call",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UndeclaredIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"undeclared identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class MissingBindingError(ExprError):
    def __init__(self, names: Iterable[str]):
        self.names = sorted(names)
        super().__init__("missing binding for " + ", ".join(self.names))


class DomainError(ExprError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# flat-function family: exp(-1/u) for u > 0, 0 otherwise, and its derivatives.
# Used to build C-infinity bump functions inside the grammar.

_FLAT_RE = re.compile(r"^flat(?:_d(\d+))?$")


@lru_cache(maxsize=None)
def _flat_poly(order: int) -> np.polynomial.Polynomial:
    # d^k/du^k exp(-1/u) = exp(-w) P_k(w), w = 1/u, P_{k+1} = w^2 (P_k - P_k')
    p = np.polynomial.Polynomial([1.0])
    w2 = np.polynomial.Polynomial([0.0, 0.0, 1.0])
    for _ in range(order):
        p = w2 * (p - p.deriv())
    return p


def _flat_scalar(order: int, u: float) -> float:
    if u <= 0.0:
        return 0.0
    w = 1.0 / u
    if w > 700.0:
        return 0.0
    return math.exp(-w) * float(_flat_poly(order)(w))


@lru_cache(maxsize=None)
def _flat_coeffs(order: int) -> tuple[float, ...]:
    return tuple(_flat_poly(order).coef[::-1])  # highest degree first, for Horner


def _flat_array(order: int, u):
    u = np.asarray(u, dtype=float)
    pos = u > 1.0 / 700.0  # below this exp(-1/u) < 1e-304: treated as 0
    w = 1.0 / np.where(pos, u, 1.0)
    acc = np.zeros_like(w)
    for c in _flat_coeffs(order):
        acc = acc * w + c
    out = np.where(pos, np.exp(-w) * acc, 0.0)
    return out if out.ndim else float(out)


def _sech_scalar(x: float) -> float:
    a = math.exp(-abs(x))
    return 2.0 * a / (1.0 + a * a)


def _sech_array(x):
    a = np.exp(-np.abs(x))
    return 2.0 * a / (1.0 + a * a)


_SCALAR_FUNCS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "ln": math.log,
    "sqrt": math.sqrt,
    "sinh": math.sinh,
    "cosh": math.cosh,
    "tanh": math.tanh,
    "sech": _sech_scalar,
    "arctan": math.atan,
}

_NUMPY_FUNCS = {
    "sin": "np.sin",
    "cos": "np.cos",
    "tan": "np.tan",
    "exp": "np.exp",
    "ln": "np.log",
    "sqrt": "np.sqrt",
    "sinh": "np.sinh",
    "cosh": "np.cosh",
    "tanh": "np.tanh",
    "sech": "_sech",
    "arctan": "np.arctan",
}

FUNCTIONS = frozenset(_SCALAR_FUNCS) | {"flat"}


def _is_function_name(name: str) -> bool:
    return name in _SCALAR_FUNCS or _FLAT_RE.match(name) is not None


# ---------------------------------------------------------------------------
# nodes


class Expression:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_source(self)

    def __call__(self, **bindings: float) -> float:
        return evaluate(self, bindings)


@dataclass(frozen=True, eq=True)
class Const(Expression):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, eq=True)
class Unary(Expression):
    op: str  # "neg" or a function name
    arg: Expression


@dataclass(frozen=True, eq=True)
class Binary(Expression):
    op: str  # one of + - * /
    left: Expression
    right: Expression


@dataclass(frozen=True, eq=True)
class Pow(Expression):
    base: Expression
    exponent: float


# ---------------------------------------------------------------------------
# smart constructors with constant folding


def const(x: float) -> Const:
    return Const(float(x))


ZERO = Const(0.0)
ONE = Const(1.0)


def _is(e: Expression, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def add(a: Expression, b: Expression) -> Expression:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Binary("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Binary("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if _is(a, -1.0):
        return neg(b)
    if _is(b, -1.0):
        return neg(a)
    return Binary("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not _is(b, 0.0):
        return ZERO
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        return Const(a.value / b.value)
    return Binary("/", a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def power(a: Expression, exponent: float) -> Expression:
    exponent = float(exponent)
    if exponent == 0.0:
        return ONE
    if exponent == 1.0:
        return a
    if isinstance(a, Const):
        try:
            return Const(_pow_scalar(a.value, exponent))
        except DomainError:
            pass
    return Pow(a, exponent)


def call(fname: str, a: Expression) -> Expression:
    if not _is_function_name(fname):
        raise ExprError(f"unknown function {fname!r}")
    if fname == "flat":
        fname = "flat_d0"
    if isinstance(a, Const):
        try:
            return Const(_apply_scalar(fname, a.value))
        except DomainError:
            pass
    return Unary(fname, a)


# ---------------------------------------------------------------------------
# parsing

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
class _Tok:
    kind: str
    text: str
    offset: int


def _byte_offset(source: str, char_index: int) -> int:
    return len(source[:char_index].encode("utf-8"))


def _tokenize(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos)
            )
        kind = m.lastgroup
        if kind != "ws":
            toks.append(_Tok(kind, m.group(), _byte_offset(source, pos)))
        pos = m.end()
    toks.append(_Tok("end", "", _byte_offset(source, len(source))))
    return toks


class _Parser:
    def __init__(self, source: str, declared: frozenset[str]):
        self.toks = _tokenize(source)
        self.i = 0
        self.declared = declared

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def eat(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> None:
        if not self.eat(text):
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {what}", self.tok.offset)

    def parse(self) -> Expression:
        e = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.offset)
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            if self.eat("+"):
                e = Binary("+", e, self.term())
            elif self.eat("-"):
                e = Binary("-", e, self.term())
            else:
                return e

    def term(self) -> Expression:
        e = self.unary()
        while True:
            if self.eat("*"):
                e = Binary("*", e, self.unary())
            elif self.eat("/"):
                e = Binary("/", e, self.unary())
            else:
                return e

    def unary(self) -> Expression:
        if self.eat("-"):
            return Unary("neg", self.unary())
        if self.eat("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            offset = self.tok.offset
            self.i += 1
            exponent = _fold(self.unary())
            if not isinstance(exponent, Const):
                raise ExprSyntaxError("exponent must be a constant", offset)
            return Pow(base, exponent.value)
        return base

    def atom(self) -> Expression:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "name":
            self.i += 1
            nxt = self.tok
            if nxt.kind == "op" and nxt.text == "(" and tok.text not in self.declared:
                if not _is_function_name(tok.text):
                    raise UndeclaredIdentifierError(tok.text, tok.offset)
                self.i += 1
                arg = self.expr()
                self.expect(")")
                name = "flat_d0" if tok.text == "flat" else tok.text
                return Unary(name, arg)
            if tok.text in self.declared:
                return Var(tok.text)
            if tok.text == "pi":
                return Const(math.pi)
            raise UndeclaredIdentifierError(tok.text, tok.offset)
        if self.eat("("):
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if tok.kind == "end" else repr(tok.text)
        raise ExprSyntaxError(f"unexpected {what}", tok.offset)


def _fold(e: Expression) -> Expression:
    """Constant-fold a freshly parsed tree."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Unary):
        a = _fold(e.arg)
        return neg(a) if e.op == "neg" else call(e.op, a)
    if isinstance(e, Pow):
        return power(_fold(e.base), e.exponent)
    a, b = _fold(e.left), _fold(e.right)
    return {"+": add, "-": sub, "*": mul, "/": div}[e.op](a, b)


def parse(source: str, declared_vars: Iterable[str]) -> Expression:
    """Parse ``source`` into an expression over ``declared_vars``.

    Every identifier must be declared, be a known function applied to an
    argument, or be ``pi``. Offsets in errors are 0-based byte offsets.
    """
    declared = list(declared_vars)
    if len(set(declared)) != len(declared):
        raise ExprError("declared variables must be pairwise distinct")
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    return _Parser(source, frozenset(declared)).parse()


# ---------------------------------------------------------------------------
# printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expression) -> str:
    """Print ``e`` in the parser's grammar; re-parsing reproduces ``e``."""
    return _show(e, 0)


def _num(v: float) -> str:
    if math.isinf(v) or math.isnan(v):
        raise ExprError(f"cannot print non-finite constant {v}")
    return repr(float(v))


def _show(e: Expression, ctx: int) -> str:
    if isinstance(e, Const):
        s = _num(e.value)
        return f"({s})" if (e.value < 0 or s.startswith("-")) and ctx > 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            s = "-" + _show(e.arg, _PREC["neg"])
            return f"({s})" if ctx > _PREC["neg"] else s
        name = "flat" if e.op == "flat_d0" else e.op
        return f"{name}({_show(e.arg, 0)})"
    if isinstance(e, Pow):
        s = f"{_show(e.base, _PREC['^'] + 1)}^{_show(Const(e.exponent), 5)}"
        return f"({s})" if ctx > _PREC["^"] else s
    p = _PREC[e.op]
    left = _show(e.left, p)
    right = _show(e.right, p + 1)
    s = f"{left} {e.op} {right}"
    return f"({s})" if ctx > p else s


# ---------------------------------------------------------------------------
# structural helpers


def free_names(e: Expression) -> frozenset[str]:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Unary):
        return free_names(e.arg)
    if isinstance(e, Pow):
        return free_names(e.base)
    return free_names(e.left) | free_names(e.right)


def substitute(e: Expression, values: Mapping[str, "float | Expression"]) -> Expression:
    """Replace variables by constants or expressions, folding constants."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        if e.name not in values:
            return e
        v = values[e.name]
        return v if isinstance(v, Expression) else const(v)
    if isinstance(e, Unary):
        a = substitute(e.arg, values)
        return neg(a) if e.op == "neg" else call(e.op, a)
    if isinstance(e, Pow):
        return power(substitute(e.base, values), e.exponent)
    a, b = substitute(e.left, values), substitute(e.right, values)
    return {"+": add, "-": sub, "*": mul, "/": div}[e.op](a, b)


# ---------------------------------------------------------------------------
# differentiation


@lru_cache(maxsize=4096)
def differentiate(e: Expression, var: str) -> Expression:
    """Exact symbolic derivative of ``e`` with respect to ``var``."""
    if not (isinstance(var, str) and re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", var)
            and not _is_function_name(var) and var != "pi"):
        raise ExprError(f"cannot differentiate with respect to {var!r}")
    return _diff(e, var)


def _diff(e: Expression, var: str) -> Expression:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Binary):
        a, b = e.left, e.right
        da, db = _diff(a, var), _diff(b, var)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, b), mul(a, db))
        # quotient rule, split so constant denominators stay simple
        if _is(db, 0.0):
            return div(da, b)
        return sub(div(da, b), div(mul(a, db), power(b, 2.0)))
    if isinstance(e, Pow):
        db = _diff(e.base, var)
        if _is(db, 0.0):
            return ZERO
        return mul(mul(const(e.exponent), power(e.base, e.exponent - 1.0)), db)
    u = e.arg
    du = _diff(u, var)
    if _is(du, 0.0):
        return ZERO
    op = e.op
    if op == "neg":
        return neg(du)
    if op == "sin":
        outer = call("cos", u)
    elif op == "cos":
        outer = neg(call("sin", u))
    elif op == "tan":
        outer = power(call("cos", u), -2.0)
    elif op == "exp":
        outer = e
    elif op == "ln":
        return div(du, u)
    elif op == "sqrt":
        return div(du, mul(const(2.0), e))
    elif op == "sinh":
        outer = call("cosh", u)
    elif op == "cosh":
        outer = call("sinh", u)
    elif op == "tanh":
        outer = sub(ONE, power(e, 2.0))
    elif op == "sech":
        outer = neg(mul(e, call("tanh", u)))
    elif op == "arctan":
        return div(du, add(ONE, power(u, 2.0)))
    else:
        order = _flat_order(op)
        outer = Unary(f"flat_d{order + 1}", u)
    return mul(outer, du)


def _flat_order(op: str) -> int:
    m = _FLAT_RE.match(op)
    if m is None:
        raise ExprError(f"unknown operator {op!r}")
    return int(m.group(1) or 0)


# ---------------------------------------------------------------------------
# evaluation


def _pow_scalar(x: float, c: float) -> float:
    if x == 0.0 and c < 0.0:
        raise DomainError("zero raised to a negative power")
    if x < 0.0 and not float(c).is_integer():
        raise DomainError("negative base with non-integer exponent")
    try:
        return math.pow(x, c)
    except (OverflowError, ValueError) as exc:
        raise DomainError(f"power overflow: {x}^{c}") from exc


def _apply_scalar(op: str, x: float) -> float:
    if op.startswith("flat"):
        return _flat_scalar(_flat_order(op), x)
    if op == "ln" and x <= 0.0:
        raise DomainError(f"ln of nonpositive value {x}")
    if op == "sqrt" and x < 0.0:
        raise DomainError(f"sqrt of negative value {x}")
    try:
        return _SCALAR_FUNCS[op](x)
    except (OverflowError, ValueError) as exc:
        raise DomainError(f"{op}({x}): {exc}") from exc


def evaluate(e: Expression, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision.

    Raises MissingBindingError if a free name is unbound and DomainError for
    division by zero, logs of nonpositive numbers and similar.
    """
    missing = free_names(e) - set(bindings)
    if missing:
        raise MissingBindingError(missing)
    value = _eval(e, bindings)
    if not math.isfinite(value):
        raise DomainError(f"non-finite result {value}")
    return value


def _eval(e: Expression, b: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return float(b[e.name])
    if isinstance(e, Unary):
        x = _eval(e.arg, b)
        return -x if e.op == "neg" else _apply_scalar(e.op, x)
    if isinstance(e, Pow):
        return _pow_scalar(_eval(e.base, b), e.exponent)
    x, y = _eval(e.left, b), _eval(e.right, b)
    if e.op == "+":
        return x + y
    if e.op == "-":
        return x - y
    if e.op == "*":
        return x * y
    if y == 0.0:
        raise DomainError("division by zero")
    return x / y


# ---------------------------------------------------------------------------
# compilation to numpy


def _np_source(e: Expression, names: Mapping[str, str], sub=None) -> str:
    """numpy source for ``e``; ``sub(node)`` may return a temporary's name instead."""
    if sub is not None:
        name = sub(e)
        if name is not None:
            return name
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return names[e.name]
    if isinstance(e, Unary):
        a = _np_source(e.arg, names, sub)
        if e.op == "neg":
            return f"(-{a})"
        if e.op.startswith("flat"):
            return f"_flat({_flat_order(e.op)}, {a})"
        return f"{_NUMPY_FUNCS[e.op]}({a})"
    if isinstance(e, Pow):
        c = e.exponent
        base = _np_source(e.base, names, sub)
        if c == 2.0:
            return f"_sq({base})"
        return f"_pow({base}, {c!r})"
    return f"({_np_source(e.left, names, sub)} {e.op} {_np_source(e.right, names, sub)})"


def _children(e: Expression) -> tuple:
    if isinstance(e, Unary):
        return (e.arg,)
    if isinstance(e, Pow):
        return (e.base,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    return ()


def _cse_body(items: list, names: Mapping[str, str]) -> tuple[list[str], list[str]]:
    """Source for ``items`` with repeated subtrees hoisted into temporaries.

    Returns (assignment lines, one source string per item).
    """
    ids: dict = {}
    memo: dict[int, int] = {}
    counts: dict[int, int] = {}

    def label(e):
        k = memo.get(id(e))
        if k is None:
            kids = tuple(label(c) for c in _children(e))
            if isinstance(e, Const):
                sig = ("c", e.value)
            elif isinstance(e, Var):
                sig = ("v", e.name)
            elif isinstance(e, Pow):
                sig = ("p", e.exponent, kids)
            else:
                sig = (type(e).__name__, e.op, kids)
            k = ids.setdefault(sig, len(ids))
            memo[id(e)] = k
        counts[k] = counts.get(k, 0) + 1
        return k

    for e in items:
        label(e)
    lines: list[str] = []
    done: dict[int, str] = {}

    def sub(e):
        if isinstance(e, (Const, Var)):
            return None
        k = memo[id(e)]
        if counts[k] < 2:
            return None
        if k not in done:
            src = _np_source(e, names, lambda n: None if n is e else sub(n))
            done[k] = f"_t{k}"
            lines.append(f"    _t{k} = {src}")
        return done[k]

    return lines, [_np_source(e, names, sub) for e in items]


def _np_pow(x, c: float):
    x = np.asarray(x, dtype=float)
    if c < 0.0 and np.any(x == 0.0):
        raise FloatingPointError("zero raised to a negative power")
    if not float(c).is_integer() and np.any(x < 0.0):
        raise FloatingPointError("negative base with non-integer exponent")
    return np.power(x, c)


def _np_sq(x):
    return x * x


_NP_NAMESPACE = {
    "np": np,
    "_sech": _sech_array,
    "_flat": _flat_array,
    "_pow": _np_pow,
    "_sq": _np_sq,
}


def compile_numpy(
    exprs: "Expression | list[Expression]", args: list[str]
) -> Callable:
    """Compile one expression or a list of them into ``f(*arrays)``.

    The function broadcasts over numpy arrays. A list compiles to a function
    returning an array stacked on the first axis. Floating point faults are
    raised as DomainError.
    """
    single = isinstance(exprs, Expression)
    items = [exprs] if single else list(exprs)
    for e in items:
        extra = free_names(e) - set(args)
        if extra:
            raise MissingBindingError(extra)
    names = {a: f"_a{i}" for i, a in enumerate(args)}
    params = ", ".join(names[a] for a in args)
    temps, body = _cse_body(items, names)
    lines = [f"def _f({params}):"] + temps
    if single:
        lines.append(f"    return {body[0]}")
    else:
        first = names[args[0]] if args else "0.0"
        lines.append(f"    _shape = np.shape({first}) if {bool(args)} else ()")
        for a in args[1:]:
            lines.append(f"    _shape = np.broadcast_shapes(_shape, np.shape({names[a]}))")
        lines.append(f"    _out = np.empty(({len(items)},) + _shape)")
        for i, src in enumerate(body):
            lines.append(f"    _out[{i}] = {src}")
        lines.append("    return _out")
    ns = dict(_NP_NAMESPACE)
    exec("\n".join(lines), ns)  # noqa: S102 - generated from a validated tree
    raw = ns["_f"]

    def checked(*arrays):
        try:
            with np.errstate(divide="raise", invalid="raise", over="raise", under="ignore"):
                return raw(*arrays)
        except (FloatingPointError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(str(exc)) from exc

    checked.source = "\n".join(lines)
    return checked
