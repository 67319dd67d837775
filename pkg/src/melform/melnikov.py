"""Integral expressions for the Mel'nikov 1-form evaluated on conserved quantities."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from . import dynamics as dyn
from . import expr as ex
from .dynamics import PeriodicOrbitRecord
from .phase import BracketEvaluator, SystemDef, wrap_difference
from .quadrature import integrate
from .separatrix import ConnectingOrbit, ConservedFrame, EndOrbit

__all__ = [
    "GuardError",
    "MelnikovSample",
    "ZeroRecord",
    "NoSignChangeError",
    "CriticalIntegralReport",
    "BoundaryTerms",
    "bracket_along_orbit",
    "orbit_integrand",
    "convergence_mode",
    "melnikov_convergent",
    "melnikov_prescribed",
    "symmetric_windows",
    "boundary_terms",
    "melnikov_function",
    "find_zeros",
    "melnikov_potential",
    "critical_fit",
    "critical_integral_basis",
    "samples_csv",
    "zeros_json",
]

CRITICAL_TOL = 1e-8
QUAD_TOL = 1e-10


class GuardError(RuntimeError):
    """A convergence hypothesis or validity guard does not hold."""


class NoSignChangeError(RuntimeError):
    pass


@dataclass
class MelnikovSample:
    value: float
    error: float
    mode: str
    label: str
    t0: float = 0.0
    s0: float = 0.0
    n: int = 0
    tail_bound: float = 0.0
    windows: list[float] = field(default_factory=list)
    diverging: bool = False

    def to_dict(self) -> dict:
        return {
            "t0": self.t0, "s0": self.s0, "value": self.value, "err": self.error,
            "mode": self.mode, "label": self.label, "n": self.n,
            "tail_bound": self.tail_bound, "windows": list(self.windows),
            "diverging": self.diverging,
        }


@dataclass
class ZeroRecord:
    t0: float
    residual: float
    slope: float
    nondegenerate: bool

    def to_dict(self) -> dict:
        return {"t0": self.t0, "residual": self.residual, "slope": self.slope,
                "nondegenerate": self.nondegenerate}


# ---------------------------------------------------------------------------
# integrands


def _clock(sys: SystemDef) -> int | None:
    return sys.index("t") if "t" in sys.coordinate_names else None


def _expr(sys: SystemDef, e) -> ex.Expression:
    return sys.parse(e) if isinstance(e, str) else e


def orbit_integrand(
    sys: SystemDef,
    H1,
    A,
    orbit: ConnectingOrbit,
    s0: float = 0.0,
    t_offset: float = 0.0,
) -> Callable[[np.ndarray], np.ndarray]:
    """u -> {H1, A} at phi^u of the base point m(s0), vectorised over u.

    ``t_offset`` is the clock of the base point: with a clock coordinate t
    the orbit is translated along t to match it; for a non-autonomous
    system it is the initial time.
    """
    br = BracketEvaluator(sys, _expr(sys, H1), _expr(sys, A))
    k = _clock(sys)
    shift = _clock_shift(sys, orbit, s0, t_offset)

    def f(u):
        u = np.asarray(u, dtype=float)
        y = orbit(s0 + u)
        if k is not None:
            y = y.copy()
            y[:, k] += shift
            return np.asarray(br(y.T), dtype=float) * np.ones(len(u))
        return np.asarray(br(y.T, t_offset + u), dtype=float) * np.ones(len(u))

    return f


def _clock_shift(sys: SystemDef, orbit: ConnectingOrbit, s0: float, t0: float) -> float:
    """Translation along the clock giving m(s0) the clock value t0."""
    k = _clock(sys)
    return 0.0 if k is None else t0 - float(orbit(s0)[k])


def bracket_along_orbit(sys: SystemDef, H1, A, orbit: ConnectingOrbit, s: float,
                        t_offset: float = 0.0) -> float:
    """{H1, A} at m(s) with H1's time argument t_offset + s."""
    f = orbit_integrand(sys, H1, A, orbit, 0.0, t_offset)
    return float(f(np.array([float(s)]))[0])


# ---------------------------------------------------------------------------
# convergence hypothesis


def _end_samples(sys: SystemDef, end: EndOrbit, count: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Points (dim, N) and times (N,) covering an end orbit."""
    if end.record is not None:
        th = np.linspace(0.0, end.period, count, endpoint=False)
        return end.at_phase(th).T, np.zeros(count)
    if sys.time_dependent:
        ts = np.linspace(0.0, sys.forcing_period, count, endpoint=False)
        return np.repeat(end.point[:, None], count, axis=1), ts
    return end.point[:, None], np.zeros(1)


def _max_gradient(sys: SystemDef, e: ex.Expression, end: EndOrbit) -> float:
    pts, ts = _end_samples(sys, end)
    g = np.asarray(sys.gradient(e)(pts, ts), dtype=float)
    g = np.broadcast_to(g, (sys.dim, pts.shape[1]))
    return float(np.max(np.linalg.norm(g, axis=0)))


def _values_on(sys: SystemDef, e: ex.Expression, end: EndOrbit) -> np.ndarray:
    pts, ts = _end_samples(sys, end)
    return np.broadcast_to(np.asarray(sys.evaluator(e)(pts, ts), dtype=float), ts.shape)


def convergence_mode(sys: SystemDef, A, H1, orbit: ConnectingOrbit,
                     tol: float = CRITICAL_TOL) -> str:
    """Which hypothesis makes the improper integral converge.

    ``convergent-criticalA`` when dA vanishes on both end orbits,
    ``convergent-criticalH1`` when dH1 does (with equal H1 values on the two
    orbits of a heteroclinic connection). Raises GuardError otherwise.
    """
    A, H1 = _expr(sys, A), _expr(sys, H1)
    ends = (("source", orbit.source), ("target", orbit.target))
    ga = {name: _max_gradient(sys, A, end) for name, end in ends}
    if max(ga.values()) < tol:
        return "convergent-criticalA"
    gh = {name: _max_gradient(sys, H1, end) for name, end in ends}
    if max(gh.values()) < tol:
        if orbit.kind == "heteroclinic":
            jump = abs(float(np.mean(_values_on(sys, H1, orbit.source)))
                       - float(np.mean(_values_on(sys, H1, orbit.target))))
            if jump >= tol:
                raise GuardError(f"H1 differs between the end orbits by {jump:.3e}")
        return "convergent-criticalH1"
    worst_a = max(ga, key=ga.get)
    worst_h = max(gh, key=gh.get)
    raise GuardError(
        f"neither A nor H1 is critical on both end orbits: |dA| = {ga[worst_a]:.3e} "
        f"on the {worst_a} orbit, |dH1| = {gh[worst_h]:.3e} on the {worst_h} orbit")


# ---------------------------------------------------------------------------
# convergent mode


def _tail_bound(f, u_edge: float, direction: float, rate: float, width: float) -> float:
    """Bound of int_{u_edge}^{+-inf} |f| from |f| <= C exp(-rate |u - u_edge|).

    C is fitted on the last stretch of length ``width`` inside the edge.
    """
    u = u_edge - direction * np.linspace(0.0, width, 33)
    vals = np.abs(f(u)) * np.exp(-rate * np.abs(u - u_edge))
    return float(np.max(vals)) / rate


def melnikov_convergent(
    sys: SystemDef,
    A,
    orbit: ConnectingOrbit,
    s0: float = 0.0,
    t_offset: float = 0.0,
    H1=None,
    quad_tol: float = QUAD_TOL,
    mode: str | None = None,
) -> MelnikovSample:
    """beta(X_A) at m(s0) as the absolutely convergent integral of {H1, A}."""
    A = _expr(sys, A)
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    if mode is None:
        mode = convergence_mode(sys, A, H1, orbit)
    f = orbit_integrand(sys, H1, A, orbit, s0, t_offset)
    lam_src, lam_tgt = orbit.rates
    width = max(2.0, orbit.source.period, orbit.target.period)
    hi, lo = orbit.S - s0, -orbit.S - s0
    tails = []
    for edge, direction, lam in ((hi, 1.0, lam_tgt), (lo, -1.0, lam_src)):
        tb = _tail_bound(f, edge, direction, lam, width)
        if tb > 0.1 * quad_tol:
            edge = edge + direction * math.log(tb / (0.1 * quad_tol)) / lam
            tb = _tail_bound(f, edge, direction, lam, width)
        tails.append((edge, tb))
    (hi, tb_hi), (lo, tb_lo) = tails
    value, qerr = integrate(f, lo, hi, abs_tol=quad_tol, rel_tol=0.0,
                            initial_panels=max(8, int(hi - lo)))
    tail = tb_hi + tb_lo
    return MelnikovSample(value, qerr + tail, mode, str(A), t0=t_offset, s0=s0,
                          tail_bound=tail)


# ---------------------------------------------------------------------------
# prescribed mode


def melnikov_prescribed(
    sys: SystemDef,
    A,
    orbit: ConnectingOrbit,
    s0: float = 0.0,
    t_offset: float = 0.0,
    H1=None,
    n_max: int = 12,
    quad_tol: float = 1e-11,
) -> MelnikovSample:
    """Window sequence I_n over [-n tau-, n tau+] around m(s0).

    The value is the mean of the last three windows and the error their
    spread plus the quadrature error; boundary terms are not included.
    """
    if n_max < 4:
        raise ValueError("n_max must be at least 4")
    A = _expr(sys, A)
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    tau_m, tau_p = orbit.source.period, orbit.target.period
    if not (tau_m > 0 and tau_p > 0):
        raise ValueError("prescribed windows need periodic end orbits")
    f = orbit_integrand(sys, H1, A, orbit, s0, t_offset)
    total, qerr = 0.0, 0.0
    seq = []
    for n in range(1, n_max + 1):
        for a, b in (((n - 1) * tau_p, n * tau_p), (-n * tau_m, -(n - 1) * tau_m)):
            v, e = integrate(f, a, b, abs_tol=quad_tol, rel_tol=0.0)
            total += v
            qerr += e
        seq.append(total)
    last = np.array(seq[-3:])
    spread = float(last.max() - last.min())
    early = np.array(seq[1:4])
    diverging = spread > 1e-6 and spread > 2.0 * float(early.max() - early.min())
    return MelnikovSample(float(last.mean()), spread + qerr, "prescribed", str(A),
                          t0=t_offset, s0=s0, n=n_max, windows=seq, diverging=diverging)


def symmetric_windows(sys: SystemDef, A, orbit: ConnectingOrbit, T_values: Sequence[float],
                      s0: float = 0.0, t_offset: float = 0.0, H1=None,
                      quad_tol: float = 1e-11) -> np.ndarray:
    """Integrals over symmetric windows [-T, T] for each T (increasing)."""
    A = _expr(sys, A)
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    f = orbit_integrand(sys, H1, A, orbit, s0, t_offset)
    out, prev, total = [], 0.0, 0.0
    for T in T_values:
        if T < prev:
            raise ValueError("T_values must increase")
        for a, b in ((prev, T), (-T, -prev)):
            total += integrate(f, a, b, abs_tol=quad_tol, rel_tol=0.0)[0]
        prev = T
        out.append(total)
    return np.array(out)


# ---------------------------------------------------------------------------
# boundary terms


@dataclass
class BoundaryTerms:
    plus: float
    minus: float
    err_plus: float
    err_minus: float
    meta: dict = field(default_factory=dict)


def _mean_on_orbit(sys: SystemDef, e: ex.Expression, rec: PeriodicOrbitRecord) -> float:
    tr = dyn.flow(sys, rec.which, rec.m0, (0.0, rec.period), sample_dt=rec.period / 200)
    g = sys.evaluator(e)
    return integrate(lambda s: np.asarray(g(tr(s).T), dtype=float) * np.ones(len(s)),
                     0.0, rec.period, abs_tol=1e-13)[0] / rec.period


def continue_orbit(sys: SystemDef, rec: PeriodicOrbitRecord, eps: float,
                   energy: float) -> PeriodicOrbitRecord:
    """Periodic orbit of H0 + eps*H1 near ``rec`` on the level {H_eps = energy}."""
    out = dyn.find_periodic_orbit(sys, rec.m0, which=float(eps), energy=energy)
    if out.classification != "nondegenerate-hyperbolic":
        raise dyn.NewtonError(f"continued orbit at eps={eps} is {out.classification}")
    return out


class _Fibre:
    """Phase-dependent stable or unstable Floquet direction of an orbit."""

    def __init__(self, sys: SystemDef, rec: PeriodicOrbitRecord, side: str,
                 like: np.ndarray | None = None):
        self.sys, self.rec = sys, rec
        w, V = np.linalg.eig(rec.monodromy)
        k = int(np.argmin(np.abs(w))) if side == "stable" else int(np.argmax(np.abs(w)))
        v = V[:, k].real
        v = v / np.linalg.norm(v)
        if like is not None and v @ like < 0:  # eigenvector signs are arbitrary
            v = -v
        self.v0 = v

    def point(self, theta: float) -> tuple[np.ndarray, np.ndarray]:
        th = float(theta) % self.rec.period
        end, phi = dyn.variational_flow(self.sys, self.rec.which, self.rec.m0, (0.0, th))
        v = phi @ self.v0
        return end, v / np.linalg.norm(v)


def _shoot(sys, rec, side, target, normals, guess, branch, delta, like=None):
    """Solve for (theta, T, u) placing the fibre point on target + span(normals)."""
    fib = _Fibre(sys, rec, side, like)
    which = rec.which
    sign = -1.0 if side == "stable" else 1.0
    field_ = sys.field_function(which)
    d_th = 1e-6

    def ends(x):
        # flowed fibre points at theta and theta +- d_th, one batched flow
        locs = []
        for th in (x[0], x[0] + d_th, x[0] - d_th):
            g, v = fib.point(th)
            locs.append(g + branch * delta * v)
        return dyn.propagate(sys, which, np.array(locs), 0.0, sign * x[1], tol=1e-13)

    def residual_of(p, x):
        return wrap_difference(sys, p - target) - normals @ x[2:]

    x = np.asarray(guess, dtype=float).copy()
    best = np.inf
    for _ in range(30):
        pts = ends(x)
        r = residual_of(pts[0], x)
        # backward flow amplifies rounding by exp(lambda T): stop on stagnation
        if np.linalg.norm(r) < 1e-12 or np.linalg.norm(r) > 0.5 * best:
            break
        best = np.linalg.norm(r)
        jac = np.empty((len(target), len(x)))
        jac[:, 0] = wrap_difference(sys, pts[1] - pts[2]) / (2.0 * d_th)
        jac[:, 1] = sign * field_(0.0, pts[0])
        jac[:, 2:] = -normals
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        x = x + step
        if np.linalg.norm(step) < 1e-14:
            r = residual_of(ends(x)[0], x)
            break
    res = float(np.linalg.norm(r))
    if res > 1e-7:
        raise dyn.NewtonError(f"phase projection did not converge (residual {res:.3e})")
    th, T = x[0], x[1]
    # asymptotic phase point: theta -/+ T along the orbit
    phase = th - T if side == "stable" else th + T
    g_end = dyn.propagate(sys, which, rec.m0, 0.0, phase % rec.period, tol=1e-13)
    p = target + normals @ x[2:]
    return x, g_end, p


def boundary_terms(
    sys: SystemDef,
    A,
    orbit: ConnectingOrbit,
    frame: ConservedFrame,
    s0: float = 0.0,
    t_offset: float = 0.0,
    H1=None,
    h: float = 1e-4,
    delta: float = 1e-6,
) -> BoundaryTerms:
    """Central differences of A at the asymptotic phase points m_eps^+-.

    The perturbed end orbits are continued on the levels E0 + eps*<H1>,
    the time average of H1 over the unperturbed orbit. The point of the
    perturbed stable (unstable) manifold above m is taken in
    m + span(grad A_j) and projected onto its orbit along the fibre.
    """
    if sys.time_dependent:
        raise ValueError("boundary terms need an autonomous system")
    A = _expr(sys, A)
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    if H1 != sys.H1:
        sys = sys.with_h1(H1)
    k = _clock(sys)
    shift = _clock_shift(sys, orbit, s0, t_offset)
    base = orbit(s0).copy()
    if k is not None:
        base[k] += shift
    normals = np.column_stack([np.asarray(sys.gradient(a)(base), dtype=float).ravel()
                               for a in frame.exprs])
    a_eval = sys.evaluator(A)
    out = {}
    for label, end, side, direction in (("plus", orbit.target, "stable", 1.0),
                                        ("minus", orbit.source, "unstable", -1.0)):
        if end.record is None:
            raise ValueError("boundary terms need periodic end orbits")
        rec0 = dyn.find_periodic_orbit(sys, end.record.m0, which=0.0,
                                       energy=float(sys.energy("H0")(end.record.m0)))
        e0 = float(sys.energy("H0")(rec0.m0))
        mean_h1 = _mean_on_orbit(sys, H1, rec0)
        # initial guess from the unperturbed orbit: where it is delta away
        def gap(u):
            y = orbit(s0 + direction * u).copy()
            if k is not None:
                y[k] += shift
            return math.log(float(end.distance(y)[0])) - math.log(delta)

        u_c = brentq(gap, 0.0, 2.0 * orbit.S + abs(s0))
        y_c = orbit(s0 + direction * u_c).copy()
        if k is not None:
            y_c[k] += shift
        end0 = EndOrbit(sys, rec0.m0, end.rate, end.stable, end.unstable, rec0)
        th0 = end0.nearest_phase(y_c)
        fib0 = _Fibre(sys, rec0, side)
        g0, v0 = fib0.point(th0)
        off = wrap_difference(sys, y_c - g0)
        branch = 1.0 if off @ v0 >= 0 else -1.0
        guess = np.concatenate([[th0, u_c], np.zeros(normals.shape[1])])
        vals, pts = {}, {}
        for eps in (0.0, h, -h):
            rec = rec0 if eps == 0.0 else continue_orbit(sys, rec0, eps, e0 + eps * mean_h1)
            x, m_eps, p_eps = _shoot(sys, rec, side, base, normals, guess, branch, delta,
                                     fib0.v0)
            if eps == 0.0:
                guess = x
            vals[eps] = float(a_eval(m_eps))
            pts[eps] = (m_eps, p_eps)
        fwd = (vals[h] - vals[0.0]) / h
        bwd = (vals[0.0] - vals[-h]) / h
        out[label] = ((vals[h] - vals[-h]) / (2.0 * h), abs(fwd - bwd) / 2.0, pts)
    meta = {"h": h, "delta": delta,
            "points": {lab: {str(e): [v.tolist() for v in pr] for e, pr in out[lab][2].items()}
                       for lab in ("plus", "minus")}}
    return BoundaryTerms(out["plus"][0], out["minus"][0], out["plus"][1], out["minus"][1], meta)


# ---------------------------------------------------------------------------
# Mel'nikov functions and zeros


def melnikov_function(
    sys: SystemDef,
    orbit: ConnectingOrbit,
    A_list: Sequence,
    t0_grid: Sequence[float],
    s0: float = 0.0,
    H1=None,
    quad_tol: float = QUAD_TOL,
) -> list[list[MelnikovSample]]:
    """M_j(t0) = beta(X_{A_j}) at the base point m(s0) with clock t0.

    Returns one list of samples per A_j, in grid order.
    """
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    out = []
    for A in A_list:
        A = _expr(sys, A)
        mode = convergence_mode(sys, A, H1, orbit)
        out.append([melnikov_convergent(sys, A, orbit, s0, float(t0), H1, quad_tol, mode)
                    for t0 in t0_grid])
    return out


MIN_ZERO_SAMPLES = 16


def find_zeros(
    samples: Sequence[MelnikovSample],
    evaluator: Callable[[float], float] | None = None,
    period: float | None = None,
    slope_tol: float = 1e-4,
    step: float = 1e-5,
) -> list[ZeroRecord]:
    """Zeros of a sampled periodic function, refined on ``evaluator``.

    Without an evaluator a periodic cubic spline through the samples is
    used. ``slope_tol`` is relative to the sample amplitude.
    """
    if len(samples) < MIN_ZERO_SAMPLES:
        raise ValueError(f"need at least {MIN_ZERO_SAMPLES} samples over one period")
    t = np.array([s.t0 for s in samples])
    v = np.array([s.value for s in samples])
    if period is None:
        period = float(t[1] - t[0]) * len(t)
    amp = float(np.max(np.abs(v)))
    err = np.array([s.error for s in samples])
    if np.all(np.abs(v) <= 2.0 * err):
        # sign changes inside the error bars are noise, not zeros
        raise NoSignChangeError("the function vanishes to within its error estimates")
    if evaluator is None:
        spline = CubicSpline(np.append(t, t[0] + period), np.append(v, v[0]),
                             bc_type="periodic")

        def evaluator(x):
            return float(spline((x - t[0]) % period + t[0]))

    tt = np.append(t, t[0] + period)
    vv = np.append(v, v[0])
    zeros = []
    for i in range(len(t)):
        a, b = tt[i], tt[i + 1]
        if not (vv[i] == 0.0 or vv[i] * vv[i + 1] < 0):
            continue
        # the evaluator decides the bracket; samples near zero may disagree in sign
        fa, fb = evaluator(a), evaluator(b)
        if fa * fb < 0:
            z = brentq(evaluator, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        else:
            z = a if abs(fa) <= abs(fb) else b
        z = (z - t[0]) % period + t[0]
        if any(abs((z - q.t0 + 0.5 * period) % period - 0.5 * period) < 1e-9 for q in zeros):
            continue
        slope = (evaluator(z + step) - evaluator(z - step)) / (2.0 * step)
        zeros.append(ZeroRecord(float(z), abs(float(evaluator(z))), float(slope),
                                bool(abs(slope) > slope_tol * amp)))
    zeros.sort(key=lambda q: q.t0)
    if not zeros:
        raise NoSignChangeError("no sign change found in the samples")
    return zeros


# ---------------------------------------------------------------------------
# potentials


def _locate_on_manifold(sys: SystemDef, orbit: ConnectingOrbit, m) -> tuple[float, float]:
    """(s, clock shift) with m = m(s) shifted along the clock; checks distance."""
    m = np.asarray(m, dtype=float)
    k = _clock(sys)
    keep = np.ones(sys.dim, dtype=bool)
    if k is not None:
        keep[k] = False
    grid = np.linspace(-orbit.S, orbit.S, 4001)
    pts = orbit(grid)
    d = np.linalg.norm(wrap_difference(sys, (pts - m).T)[keep], axis=0)
    i = int(np.argmin(d))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    field_ = sys.field_function("H0")

    def slope(s):
        y = orbit(s)
        return float(wrap_difference(sys, y - m)[keep] @ field_(0.0, y)[keep])

    s = brentq(slope, lo, hi, xtol=1e-14) if slope(lo) * slope(hi) < 0 else grid[i]
    y = orbit(s)
    dist = float(np.linalg.norm(wrap_difference(sys, y - m)[keep]))
    if dist > 1e-6:
        raise GuardError(f"point is not on the connecting manifold (distance {dist:.3e})")
    shift = float(m[k] - y[k]) if k is not None else 0.0
    return float(s), shift


def melnikov_potential(
    sys: SystemDef,
    frame: ConservedFrame | None,
    orbit: ConnectingOrbit,
    m0,
    m,
    H1=None,
    quad_tol: float = 1e-11,
    guard_tol: float = 1e-8,
) -> float:
    """L(m) = int (H1(phi^t m) - H1(phi^t m0)) dt, normalised by L(m0) = 0.

    With this sign dL(X_A) = beta(X_A). Needs H1 constant on each end
    orbit; otherwise the integral does not converge.
    """
    H1 = sys.H1 if H1 is None else _expr(sys, H1)
    for name, end in (("source", orbit.source), ("target", orbit.target)):
        vals = _values_on(sys, H1, end)
        spread = float(vals.max() - vals.min())
        if spread > guard_tol:
            raise GuardError(f"H1 is not constant on the {name} orbit "
                             f"(spread {spread:.3e}); the potential integral diverges")
    k = _clock(sys)
    s_a, c_a = _locate_on_manifold(sys, orbit, m)
    s_b, c_b = _locate_on_manifold(sys, orbit, m0)
    g = sys.evaluator(H1)

    def along(s_base, shift):
        def h(u):
            y = orbit(s_base + u).copy()
            if k is not None:
                y[:, k] += shift
                return np.asarray(g(y.T), dtype=float) * np.ones(len(u))
            return np.asarray(g(y.T, shift + u), dtype=float) * np.ones(len(u))
        return h

    fa, fb = along(s_a, c_a), along(s_b, c_b)

    def diff(u):
        return fa(u) - fb(u)

    lam = min(orbit.rates)
    span = orbit.S + max(abs(s_a), abs(s_b)) + math.log(1e3 / quad_tol) / lam
    value, _ = integrate(diff, -span, span, abs_tol=quad_tol, rel_tol=0.0,
                         initial_panels=max(8, int(2 * span)))
    return value


# ---------------------------------------------------------------------------
# critical first integrals


@dataclass
class CriticalIntegralReport:
    labels: list[str]
    c_plus: list[float]
    c_minus: list[float]
    residual_plus: list[float]
    residual_minus: list[float]
    homoclinic: bool
    basis: np.ndarray  # (p, d) coefficient rows in the frame
    basis_exprs: list[ex.Expression]
    singular_values: list[float]

    @property
    def p(self) -> int:
        return int(self.basis.shape[0])

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "c_plus": self.c_plus,
            "c_minus": self.c_minus,
            "fit_residual_plus": self.residual_plus,
            "fit_residual_minus": self.residual_minus,
            "homoclinic": self.homoclinic,
            "p": self.p,
            "basis": self.basis.tolist(),
            "basis_exprs": [ex.to_source(e) for e in self.basis_exprs],
            "singular_values": self.singular_values,
        }


def critical_fit(sys: SystemDef, A, rec: PeriodicOrbitRecord, samples: int = 32) -> tuple[float, float]:
    """c with X_A = c X_H0 on the orbit (least squares) and the relative residual."""
    A = _expr(sys, A)
    th = np.linspace(0.0, rec.period, samples, endpoint=False)
    tr = dyn.flow(sys, rec.which, rec.m0, (0.0, rec.period), sample_dt=rec.period / samples)
    pts = tr(th).T
    J = dyn.symplectic_matrix(sys.n)
    xa = J @ np.asarray(sys.gradient(A)(pts), dtype=float).reshape(sys.dim, -1)
    xh = np.asarray(sys.field_function(rec.which)(0.0, pts), dtype=float)
    c = float(np.sum(xa * xh) / np.sum(xh * xh))
    scale = float(np.max(np.linalg.norm(xh, axis=0)))
    res = float(np.max(np.linalg.norm(xa - c * xh, axis=0))) / scale
    return c, res


def critical_integral_basis(
    sys: SystemDef,
    frame: ConservedFrame,
    plus: PeriodicOrbitRecord,
    minus: PeriodicOrbitRecord,
    fit_tol: float = 1e-6,
    sv_tol: float = 1e-8,
) -> CriticalIntegralReport:
    """Frame combinations with c+ = c- = 0 (critical on both orbits)."""
    exprs = list(frame.exprs)
    labels = [ex.to_source(e) for e in exprs]
    cp, rp, cm, rm = [], [], [], []
    for e, lab in zip(exprs, labels):
        c, r = critical_fit(sys, e, plus)
        if r > fit_tol:
            raise GuardError(f"X_A is not proportional to X_H0 on the + orbit for {lab} "
                             f"(residual {r:.3e})")
        cp.append(c)
        rp.append(r)
        c, r = critical_fit(sys, e, minus)
        if r > fit_tol:
            raise GuardError(f"X_A is not proportional to X_H0 on the - orbit for {lab} "
                             f"(residual {r:.3e})")
        cm.append(c)
        rm.append(r)
    homoclinic = _same_cycle(sys, plus, minus)
    C = np.array([cp]) if homoclinic else np.array([cp, cm])
    _, sv, vt = np.linalg.svd(C)
    rank = int(np.sum(sv > sv_tol))
    basis = vt[rank:]
    for row in basis:
        if np.max(np.abs(C @ row)) >= 1e-8:
            raise GuardError("null-space vector is not critical to 1e-8")
    basis_exprs = []
    for row in basis:
        e = ex.const(0.0)
        for coef, a in zip(row, exprs):
            if abs(coef) > 1e-14:
                e = ex.add(e, ex.mul(ex.const(float(coef)), a))
        basis_exprs.append(e)
    return CriticalIntegralReport(labels, cp, cm, rp, rm, homoclinic, basis, basis_exprs,
                                  [float(x) for x in sv])


def _same_cycle(sys: SystemDef, a: PeriodicOrbitRecord, b: PeriodicOrbitRecord) -> bool:
    if abs(a.period - b.period) > 1e-8:
        return False
    tr = dyn.flow(sys, a.which, a.m0, (0.0, a.period), sample_dt=a.period / 400)
    d = np.linalg.norm(wrap_difference(sys, (tr.y - b.m0).T), axis=0)
    return float(d.min()) < 1e-6


# ---------------------------------------------------------------------------
# export


def _g(x: float) -> str:
    return format(float(x), ".17g")


def samples_csv(samples: Sequence[MelnikovSample]) -> str:
    lines = ["t0,value,err,mode,n"]
    for s in samples:
        lines.append(f"{_g(s.t0)},{_g(s.value)},{_g(s.error)},{s.mode},{s.n}")
    return "\n".join(lines) + "\n"


def zeros_json(zeros: Sequence[ZeroRecord]) -> str:
    return json.dumps([z.to_dict() for z in zeros], indent=1) + "\n"
