"""Canonical phase spaces, Hamiltonian vector fields and Poisson brackets.

Sign convention: q' = dH/dp, p' = -dH/dq and
{f, g} = sum_i df/dq_i dg/dp_i - df/dp_i dg/dq_i, so that f' = {f, H}.
Phase points are numpy vectors ordered (q1, p1, ..., qn, pn).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from . import expr as ex
from .expr import Expression

__all__ = [
    "SystemError_",
    "CoordinatePair",
    "SystemDef",
    "make_system",
    "make_point",
    "wrap_difference",
    "phase_distance",
    "hamiltonian_vector_field",
    "poisson_bracket",
    "bracket_hook",
    "extend_periodic",
    "catalog",
    "load_system_file",
    "CATALOG_NAMES",
]

Which = Union[str, float]

CATALOG_NAMES = ("pendulum", "duffing", "paper-example")


class SystemError_(ValueError):
    """Invalid system definition or a system used outside its contract."""


@dataclass(frozen=True)
class CoordinatePair:
    position: str
    momentum: str
    circumference: float | None = None  # None: position lives on the line

    def __post_init__(self):
        c = self.circumference
        if c is not None and not (math.isfinite(c) and c > 0):
            raise SystemError_(f"circumference of {self.position!r} must be finite and positive")

    @property
    def is_circle(self) -> bool:
        return self.circumference is not None


class _BracketHook:
    """Test hook: flips the sign of the second bracket term when enabled."""

    flip = False


bracket_hook = _BracketHook()


@dataclass(frozen=True, eq=False)
class SystemDef:
    pairs: tuple[CoordinatePair, ...]
    h0: Expression
    h1: Expression
    params: Mapping[str, float] = field(default_factory=dict)
    time_dependent: bool = False
    forcing_period: float | None = None
    name: str = "custom"

    def __post_init__(self):
        names = self.coordinate_names
        if len(set(names)) != len(names):
            raise SystemError_("coordinate names must be globally unique")
        if set(names) & set(self.params):
            raise SystemError_("parameter names clash with coordinates")
        allowed = set(names) | set(self.params)
        if self.time_dependent:
            if "t" in names:
                raise SystemError_("time-dependent system may not use 't' as a coordinate")
            if self.forcing_period is None or not self.forcing_period > 0:
                raise SystemError_("time-dependent system needs a positive forcing period")
            allowed_h1 = allowed | {"t"}
        else:
            allowed_h1 = allowed
        if ("t" in ex.free_names(self.h0)) and "t" not in names:
            raise SystemError_("H0 must not reference time")
        for label, e, ok in (("H0", self.h0, allowed), ("H1", self.h1, allowed_h1)):
            extra = ex.free_names(e) - ok
            if extra:
                raise SystemError_(f"{label} references undeclared names {sorted(extra)}")

    # -- layout -------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def dim(self) -> int:
        return 2 * len(self.pairs)

    @property
    def coordinate_names(self) -> list[str]:
        out = []
        for p in self.pairs:
            out += [p.position, p.momentum]
        return out

    @property
    def positions(self) -> list[str]:
        return [p.position for p in self.pairs]

    @property
    def momenta(self) -> list[str]:
        return [p.momentum for p in self.pairs]

    @property
    def circumferences(self) -> np.ndarray:
        """Length-2n vector: circumference for circle positions, 0 elsewhere."""
        c = np.zeros(self.dim)
        for i, p in enumerate(self.pairs):
            if p.is_circle:
                c[2 * i] = p.circumference
        return c

    def index(self, name: str) -> int:
        try:
            return self.coordinate_names.index(name)
        except ValueError:
            raise SystemError_(f"unknown coordinate {name!r}") from None

    @property
    def arg_names(self) -> list[str]:
        names = self.coordinate_names
        return names + (["__time"] if "t" in names else ["t"])

    # -- expressions ----------------------------------------------------------

    def parse(self, source: str) -> Expression:
        """Parse a user expression over this system's names (params folded in)."""
        names = self.coordinate_names + list(self.params)
        if self.time_dependent:
            names.append("t")
        return ex.substitute(ex.parse(source, names), self.params)

    @cached_property
    def H0(self) -> Expression:
        return ex.substitute(self.h0, self.params)

    @cached_property
    def H1(self) -> Expression:
        return ex.substitute(self.h1, self.params)

    def hamiltonian(self, which: Which) -> Expression:
        if which == "H0":
            return self.H0
        if which == "H1":
            return self.H1
        eps = float(which)
        return ex.add(self.H0, ex.mul(ex.const(eps), self.H1))

    def evaluator(self, e: Expression):
        """Compile ``e`` to ``f(y, t)`` with ``y`` of shape (2n, ...)."""
        return _Compiled(self, ex.substitute(e, self.params))

    def gradient(self, e: Expression):
        """Compiled gradient of ``e``: ``g(y, t)`` -> array (2n, ...)."""
        e = ex.substitute(e, self.params)
        grads = [ex.differentiate(e, v) for v in self.coordinate_names]
        return _Compiled(self, grads)

    def vector_field_exprs(self, e: Expression) -> list[Expression]:
        e = ex.substitute(e, self.params)
        out = []
        for p in self.pairs:
            out.append(ex.differentiate(e, p.momentum))
            out.append(ex.neg(ex.differentiate(e, p.position)))
        return out

    def hessian_exprs(self, e: Expression) -> list[Expression]:
        e = ex.substitute(e, self.params)
        names = self.coordinate_names
        first = [ex.differentiate(e, v) for v in names]
        return [ex.differentiate(d, v) for d in first for v in names]

    @cached_property
    def _fields(self) -> dict:
        return {}

    def field_function(self, which: Which):
        """Compiled X_H as ``f(t, y)`` with ``y`` of shape (2n,) or (2n, N)."""
        key = ("X", which)
        if key not in self._fields:
            if which in ("H0", "H1"):
                fx = _Compiled(self, self.vector_field_exprs(self.hamiltonian(which)))
                self._fields[key] = lambda t, y, fx=fx: fx(y, t)
            else:
                f0, f1 = self.field_function("H0"), self.field_function("H1")
                eps = float(which)
                self._fields[key] = lambda t, y: f0(t, y) + eps * f1(t, y)
        return self._fields[key]

    def hessian_function(self, which: Which):
        """Compiled Hessian ``h(t, y)`` -> (2n, 2n) for a single point."""
        key = ("D2", which)
        if key not in self._fields:
            if which in ("H0", "H1"):
                hx = _Compiled(self, self.hessian_exprs(self.hamiltonian(which)))
                d = self.dim
                self._fields[key] = lambda t, y, hx=hx: hx(y, t).reshape(d, d)
            else:
                h0, h1 = self.hessian_function("H0"), self.hessian_function("H1")
                eps = float(which)
                self._fields[key] = lambda t, y: h0(t, y) + eps * h1(t, y)
        return self._fields[key]

    def energy(self, which: Which = "H0"):
        key = ("E", which)
        if key not in self._fields:
            self._fields[key] = self.evaluator(self.hamiltonian(which))
        return self._fields[key]

    def with_h1(self, h1: "str | Expression") -> "SystemDef":
        e = h1 if isinstance(h1, Expression) else ex.parse(h1, self._h1_names())
        return SystemDef(self.pairs, self.h0, e, dict(self.params), self.time_dependent,
                         self.forcing_period, self.name)

    def _h1_names(self) -> list[str]:
        names = self.coordinate_names + list(self.params)
        if self.time_dependent:
            names.append("t")
        return names


class _Compiled:
    """Expression(s) compiled against a system's coordinate layout."""

    def __init__(self, sys: SystemDef, exprs):
        self.fn = ex.compile_numpy(exprs, sys.arg_names)
        self.dim = sys.dim

    def __call__(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        return self.fn(*[y[i] for i in range(self.dim)], t)


def make_system(
    pairs: Sequence[CoordinatePair],
    h0: str,
    h1: str = "0",
    params: Mapping[str, float] | None = None,
    time_dependent: bool = False,
    forcing_period: float | None = None,
    name: str = "custom",
    check_periodicity: bool = True,
) -> SystemDef:
    """Build a system from expression text, validating names and periodicity."""
    params = dict(params or {})
    names = []
    for p in pairs:
        names += [p.position, p.momentum]
    base = names + list(params)
    H0 = ex.parse(h0, base)
    H1 = ex.parse(h1, base + (["t"] if time_dependent else []))
    sys = SystemDef(tuple(pairs), H0, H1, params, time_dependent, forcing_period, name)
    if time_dependent and check_periodicity:
        _check_periodic(sys)
    return sys


def _check_periodic(sys: SystemDef, samples: int = 32, tol: float = 1e-12) -> None:
    rng = np.random.default_rng(20241019)
    y = rng.uniform(-2.0, 2.0, size=(sys.dim, samples))
    t = rng.uniform(0.0, sys.forcing_period, size=samples)
    f = sys.evaluator(sys.H1)
    a, b = f(y, t), f(y, t + sys.forcing_period)
    scale = np.maximum(1.0, np.abs(a))
    if np.max(np.abs(a - b) / scale) >= tol:
        raise SystemError_("H1 is not periodic in t with the declared forcing period")


# ---------------------------------------------------------------------------
# points


def make_point(sys: SystemDef, values: Sequence[float]) -> np.ndarray:
    """Phase point with circle coordinates reduced to [0, circumference)."""
    y = np.array(values, dtype=float)
    if y.shape != (sys.dim,):
        raise SystemError_(f"expected {sys.dim} coordinates, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise SystemError_("phase point entries must be finite")
    return reduce_point(sys, y)


def reduce_point(sys: SystemDef, y: np.ndarray) -> np.ndarray:
    y = np.array(y, dtype=float)
    c = sys.circumferences
    mask = c > 0
    if np.any(mask):
        y[mask, ...] = np.mod(y[mask, ...], c[mask, None] if y.ndim > 1 else c[mask])
    return y


def wrap_difference(sys: SystemDef, d: np.ndarray) -> np.ndarray:
    """Reduce circle components of a difference to [-C/2, C/2)."""
    d = np.array(d, dtype=float)
    c = sys.circumferences
    for i in np.nonzero(c)[0]:
        d[i] = (d[i] + 0.5 * c[i]) % c[i] - 0.5 * c[i]
    return d


def phase_distance(sys: SystemDef, a, b) -> float:
    return float(np.linalg.norm(wrap_difference(sys, np.asarray(a) - np.asarray(b))))


# ---------------------------------------------------------------------------
# operations


def hamiltonian_vector_field(sys: SystemDef, which: Which, m, t: float = 0.0) -> np.ndarray:
    """X_H at ``m``; ``which`` is "H0", "H1" or a float eps for H0 + eps*H1."""
    return np.asarray(sys.field_function(which)(t, np.asarray(m, dtype=float)))


def _bracket_from_grads(sys: SystemDef, gf: np.ndarray, gg: np.ndarray):
    first = 0.0
    second = 0.0
    for i in range(sys.n):
        first = first + gf[2 * i] * gg[2 * i + 1]
        second = second + gf[2 * i + 1] * gg[2 * i]
    return first + second if bracket_hook.flip else first - second


class BracketEvaluator:
    """Vectorised {f, g} on arrays of points; reused along trajectories."""

    def __init__(self, sys: SystemDef, f: Expression, g: Expression):
        self.sys = sys
        self.gf = sys.gradient(f)
        self.gg = sys.gradient(g)

    def __call__(self, y, t=0.0):
        y = np.asarray(y, dtype=float)
        return _bracket_from_grads(self.sys, self.gf(y, t), self.gg(y, t))


def poisson_bracket(sys: SystemDef, f: Expression, g: Expression, m, t: float = 0.0) -> float:
    return float(BracketEvaluator(sys, f, g)(m, t))


def extend_periodic(sys: SystemDef) -> SystemDef:
    """Autonomous extension with the (t, eta) pair; H0~ = H0 + eta, H1~ = H1."""
    if not sys.time_dependent:
        raise SystemError_("extend_periodic needs a time-dependent system")
    if "eta" in sys.coordinate_names or "eta" in sys.params:
        raise SystemError_("name 'eta' is reserved for the extended momentum")
    pairs = sys.pairs + (CoordinatePair("t", "eta", sys.forcing_period),)
    h0 = ex.add(sys.h0, ex.Var("eta"))
    return SystemDef(pairs, h0, sys.h1, dict(sys.params), False, None, sys.name + "~")


# ---------------------------------------------------------------------------
# catalog


def bump_source(c: float, delta: float, x: str = "x", xi: str = "xi") -> str:
    """C-infinity bump: c inside r^2 <= delta/2, zero outside r^2 >= delta."""
    r2 = f"({x}^2 + {xi}^2)"
    a = f"flat({delta!r} - {r2})"
    b = f"flat({r2} - {0.5 * delta!r})"
    return f"{c!r}*{a}/({a} + {b})"


def catalog(name: str, params: Mapping[str, float] | None = None, h1: str | None = None) -> SystemDef:
    """Built-in systems.

    pendulum      H0 = p^2/2 + cos(q), q on a circle of length 2pi,
                  forced by H1 = p*cos(omega*t) (period 2pi/omega).
    duffing       H0 = p^2/2 - q^2/2 + q^4/4 on the plane,
                  forced by H1 = q*cos(omega*t).
    paper-example pairs (t, eta), (x, xi) with t on a unit circle,
                  H0 = eta*(1 + G) + xi^2 + cos(x), G a bump of height c and
                  radius^2 delta; H1 = cos(2*pi*t)*cos(x).
    """
    params = dict(params or {})
    if name in ("pendulum", "duffing"):
        omega = float(params.pop("omega", 1.0))
        if not omega > 0:
            raise SystemError_("omega must be positive")
        if params:
            raise SystemError_(f"unknown parameters {sorted(params)} for {name}")
        if name == "pendulum":
            pairs = [CoordinatePair("q", "p", 2.0 * math.pi)]
            h0 = "p^2/2 + cos(q)"
            default_h1 = "p*cos(omega*t)"
        else:
            pairs = [CoordinatePair("q", "p")]
            h0 = "p^2/2 - q^2/2 + q^4/4"
            default_h1 = "q*cos(omega*t)"
        return make_system(pairs, h0, h1 or default_h1, {"omega": omega},
                           time_dependent=True, forcing_period=2.0 * math.pi / omega,
                           name=name)
    if name == "paper-example":
        c = float(params.pop("c", 0.5))
        delta = float(params.pop("delta", 0.3))
        if params:
            raise SystemError_(f"unknown parameters {sorted(params)} for {name}")
        if not delta > 0:
            raise SystemError_("delta must be positive")
        if not c > 0:
            raise SystemError_("c must be positive")
        pairs = [CoordinatePair("t", "eta", 1.0), CoordinatePair("x", "xi")]
        h0 = f"eta*(1 + {bump_source(c, delta)}) + xi^2 + cos(x)"
        return make_system(pairs, h0, h1 or "cos(2*pi*t)*cos(x)", {}, name=name)
    raise SystemError_(f"unknown catalog system {name!r}; choose from {CATALOG_NAMES}")


def bump_equal_periods(delta: float = 0.3) -> SystemDef:
    """The bump example with G = 0 (c = 0): both orbits have period 1."""
    pairs = [CoordinatePair("t", "eta", 1.0), CoordinatePair("x", "xi")]
    return make_system(pairs, "eta + xi^2 + cos(x)", "cos(2*pi*t)*cos(x)",
                       name="paper-example-c0")


# ---------------------------------------------------------------------------
# system definition files


def _unquote(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def load_system_file(path: "str | Path") -> SystemDef:
    """Load a ``key = value`` system file (sections [pairs], [params], [hamiltonian])."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    cp.optionxform = str
    text = Path(path).read_text(encoding="utf-8")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SystemError_(f"{path}: {exc}") from exc
    if not cp.has_section("pairs") or not cp.has_section("hamiltonian"):
        raise SystemError_(f"{path}: sections [pairs] and [hamiltonian] are required")
    pairs = []
    for pos, spec in cp.items("pairs"):
        parts = [s.strip() for s in _unquote(spec).split(",")]
        if len(parts) == 1 or (len(parts) == 2 and parts[1] == "line"):
            pairs.append(CoordinatePair(pos, parts[0]))
        elif len(parts) == 3 and parts[1] == "circle":
            circ = ex.evaluate(ex.parse(parts[2], []), {})
            pairs.append(CoordinatePair(pos, parts[0], circ))
        else:
            raise SystemError_(f"{path}: bad pair spec {pos} = {spec}")
    params = {}
    if cp.has_section("params"):
        for k, v in cp.items("params"):
            params[k] = ex.evaluate(ex.parse(_unquote(v), []), {})
    ham = dict(cp.items("hamiltonian"))
    if "H0" not in ham:
        raise SystemError_(f"{path}: [hamiltonian] needs H0")
    td = ham.get("time_dependent", "false").strip().lower() in ("1", "true", "yes")
    period = ham.get("forcing_period")
    period = ex.evaluate(ex.parse(_unquote(period), []), {}) if period else None
    return make_system(pairs, _unquote(ham["H0"]), _unquote(ham.get("H1", "0")), params,
                       time_dependent=td, forcing_period=period,
                       name=_unquote(ham.get("name", Path(path).stem)))
