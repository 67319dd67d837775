"""The ten acceptance checks, shared by ``melform verify`` and the test suite.

Each check returns a CheckResult; runtime limits are part of the verdict.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import dynamics as dyn
from . import example as E
from . import expr as ex
from . import melnikov as mk
from . import separatrix as sp
from . import splitting as spl
from .phase import catalog, extend_periodic


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    values: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f} s)"


def _timed(fn):
    def run(*a, **kw):
        t = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t
        if res.values.get("limit") is not None and res.seconds >= res.values["limit"]:
            res.passed = False
            res.detail += f"; runtime {res.seconds:.1f} s over the {res.values['limit']} s limit"
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def check_periods() -> CheckResult:
    r = E.report(0.5, 0.3, 0.01)
    e0 = abs(r["period_x0"] - 2.0 / 3.0)
    e1 = abs(r["period_x2pi"] - 1.0)
    ok = e0 < 1e-8 and e1 < 1e-8
    return CheckResult(1, "example periods", ok,
                       f"periods {r['period_x2pi']:.9f} and {r['period_x0']:.9f} "
                       f"(errors {e1:.1e}, {e0:.1e})",
                       values={"limit": 5.0, "errors": [e1, e0]})


@_timed
def check_counting() -> CheckResult:
    r = E.report(0.5, 0.3, 0.0)["counting"]
    r0 = E.report(0.0, 0.3, 0.0)["counting"]
    cp, cm = r["c_plus"][1], r["c_minus"][1]
    ok = (abs(cp - 2.0 / 3.0) < 1e-6 and abs(cm - 1.0) < 1e-6 and r["p"] == 0
          and r0["p"] == 1)
    return CheckResult(2, "critical-integral counting", ok,
                       f"c+(eta)={cp:.9f} c-(eta)={cm:.9f} p={r['p']}, equal periods p={r0['p']}",
                       values={"limit": 10.0})


def pendulum_trapezoid(t0, half_width: float = 60.0, h: float = 2e-3) -> np.ndarray:
    """Dense trapezoid of cos(t0 + s) sin q(s) on the closed-form separatrix."""
    s = np.arange(-half_width, half_width + 0.5 * h, h)
    q = 4.0 * np.arctan(np.exp(s))
    w = np.full(s.shape, h)
    w[[0, -1]] *= 0.5
    c = np.sum(w * np.cos(s) * np.sin(q))
    d = np.sum(w * np.sin(s) * np.sin(q))
    t0 = np.asarray(t0, dtype=float)
    return np.cos(t0) * c - np.sin(t0) * d


@_timed
def check_pendulum() -> CheckResult:
    ext, orbit = E.forced_pendulum()
    grid = np.linspace(0.0, 2.0 * math.pi, 128, endpoint=False)
    t = time.perf_counter()
    samples = mk.melnikov_function(ext, orbit, [ext.parse("p^2/2 + cos(q)")], grid)[0]
    sample_time = time.perf_counter() - t
    v = np.array([s.value for s in samples])
    amp_ref = E.pendulum_amplitude()
    amp = float(2.0 / len(grid) * np.sum(v * np.sin(grid)))
    rel = abs(amp - amp_ref) / amp_ref
    oracle = float(np.max(np.abs(v - pendulum_trapezoid(grid))))
    A = ext.parse("p^2/2 + cos(q)")
    zeros = mk.find_zeros(samples, evaluator=lambda x: mk.melnikov_convergent(
        ext, A, orbit, 0.0, x).value, period=2.0 * math.pi)
    zt = np.array([z.t0 for z in zeros])
    zero_err = float(np.max(np.abs(zt - math.pi * np.round(zt / math.pi)))) if zt.size else np.inf
    ok = (rel < 1e-6 and oracle < 1e-10 and zt.size == 2 and zero_err < 1e-6
          and all(z.nondegenerate for z in zeros) and sample_time < 5.0)
    return CheckResult(3, "forced pendulum function", ok,
                       f"amplitude {amp:.10f} (rel {rel:.1e}), trapezoid gap {oracle:.1e}, "
                       f"{zt.size} zeros (err {zero_err:.1e}), 128 samples in {sample_time:.2f} s",
                       values={"amplitude": amp, "samples": v, "limit": None})


@_timed
def check_exactness() -> CheckResult:
    ext, orbit = E.forced_pendulum()
    grid = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    v = np.array([s.value for s in mk.melnikov_function(
        ext, orbit, [ext.parse("p^2/2 + cos(q)")], grid)[0]])
    ratio = abs(float(np.mean(v))) / E.pendulum_amplitude()
    return CheckResult(4, "exactness surrogate", ratio < 1e-8,
                       f"|mean|/amplitude = {ratio:.1e}")


@_timed
def check_shift() -> CheckResult:
    ext, orbit = E.forced_pendulum()
    A = ext.parse("p^2/2 + cos(q)")
    worst = 0.0
    for sigma in (0.3, 1.7):
        for t0 in (0.4, 2.2):
            shifted = mk.melnikov_convergent(ext, A, orbit, sigma, t0).value
            direct = mk.melnikov_convergent(ext, A, orbit, 0.0, t0 - sigma).value
            worst = max(worst, abs(shifted - direct))
    return CheckResult(5, "flow-shift identity", worst < 1e-8, f"max difference {worst:.1e}")


@_timed
def check_tangent() -> CheckResult:
    # H1 critical on the saddle circle, so the convergent integral exists for H0~
    ext, orbit = E.forced_pendulum(h1="(1 - cos(q))*cos(t)")
    bad, worst = 0, 0.0
    for s0 in (-1.5, -0.5, 0.5, 1.5):
        for t0 in (0.3, 1.4, 2.9, 4.4):
            r = mk.melnikov_convergent(ext, ext.H0, orbit, s0, t0)
            worst = max(worst, abs(r.value) / max(r.error, 1e-300))
            bad += abs(r.value) > 2.0 * r.error
    return CheckResult(6, "beta(X_H0~) = 0", bad == 0,
                       f"{16 - bad}/16 base points within 2x error (worst |value|/error {worst:.2f})")


@_timed
def check_modes() -> CheckResult:
    cases = []
    ext, orbit = E.forced_pendulum()
    cases.append(("pendulum", ext, orbit, 0.0, 0.5))
    ext2, orbit2 = E.forced_pendulum(h1="(1 - cos(q))*cos(t)")
    cases.append(("pendulum, critical H1", ext2, orbit2, 0.4, 1.0))
    duf = extend_periodic(catalog("duffing"))
    cases.append(("duffing", duf, sp.analytic_separatrix("duffing").lift(duf, 0.0), 0.0, 1.3))
    worst, msgs = 0.0, []
    ok = True
    for label, sys, orb, s0, t0 in cases:
        A = sys.parse("p^2/2 + cos(q)" if "pendulum" in label else "p^2/2 - q^2/2 + q^4/4")
        c = mk.melnikov_convergent(sys, A, orb, s0, t0)
        p = mk.melnikov_prescribed(sys, A, orb, s0, t0)
        gap = abs(c.value - p.value)
        ok &= gap <= c.error + p.error
        msgs.append(f"{label} {gap:.1e}<={c.error + p.error:.1e}")
    sys = E.bump_system()
    orb = E.heteroclinic(sys)
    pr = mk.melnikov_prescribed(sys, "eta", orb)
    spread = float(np.ptp(pr.windows[-3:]))
    T = np.linspace(20.05, 27.3, 40)
    W = mk.symmetric_windows(sys, "eta", orb, T)
    osc = float(np.ptp(W))
    ok &= spread < 1e-6 and osc > 1e-2
    msgs.append(f"bump example spread {spread:.1e}, symmetric-window swing {osc:.2f}")
    return CheckResult(7, "mode consistency", bool(ok), "; ".join(msgs))


PHASES = tuple(math.pi / 2 + 2.0 * math.pi * k / 5 for k in range(5))


def pendulum_splitting(eps_values=(1e-2, 1e-3), phases=PHASES) -> spl.SplittingReport:
    ext, orbit = E.forced_pendulum()
    A = ext.parse("p^2/2 + cos(q)")
    pend = catalog("pendulum")

    def melnikov(t0):
        return mk.melnikov_convergent(ext, A, orbit, 0.0, t0).value

    return spl.first_order_check(pend, [math.pi, 2.0], [0.0, 0.0], [2.0 * math.pi, 0.0],
                                 melnikov, E.pendulum_amplitude(), eps_values, phases)


@_timed
def check_splitting() -> CheckResult:
    rep = pendulum_splitting()
    dev = float(np.max(rep.deviations[-1]))
    ratio = rep.residual_ratio
    ok = dev < 0.05 and 5.0 <= ratio <= 20.0
    return CheckResult(8, "first-order splitting oracle", ok,
                       f"max deviation {dev:.2e} at eps=1e-3, residual ratio {ratio:.2f}, "
                       f"order {rep.fitted_order:.2f}",
                       values={"limit": 60.0, "report": rep.to_dict()})


def random_expression(rng: np.random.Generator, names, depth: int = 3) -> str:
    """A random smooth expression that stays finite on [-1, 1]^n."""
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return str(rng.choice(names))
        return f"{rng.uniform(-2, 2):.3f}"
    kind = rng.integers(0, 7)
    a = random_expression(rng, names, depth - 1)
    b = random_expression(rng, names, depth - 1)
    if kind == 0:
        return f"({a} + {b})"
    if kind == 1:
        return f"({a} - {b})"
    if kind == 2:
        return f"({a} * {b})"
    if kind == 3:
        return f"{rng.choice(['sin', 'cos', 'sech'])}({a})"
    if kind == 4:
        return f"({a})^{int(rng.integers(2, 4))}"
    if kind == 5:
        return f"({a})/(2 + cos({b}))"
    return f"exp(sin({a}))"


def derivative_errors(count: int = 100, seed: int = 7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    names = ["x", "y", "z"]
    errs = []
    h = 1e-5
    for _ in range(count):
        e = ex.parse(random_expression(rng, names), names)
        point = dict(zip(names, rng.uniform(-1, 1, 3)))
        var = str(rng.choice(names))
        d = ex.evaluate(ex.differentiate(e, var), point)
        up, dn = dict(point), dict(point)
        up[var] += h
        dn[var] -= h
        fd = (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)
        errs.append(abs(d - fd) / max(1.0, abs(d)))
    return np.array(errs)


def symplecticity(rec: dyn.PeriodicOrbitRecord) -> float:
    M = rec.monodromy
    J = dyn.symplectic_matrix(M.shape[0] // 2)
    return float(np.linalg.norm(M.T @ J @ M - J) / max(1.0, np.linalg.norm(M) ** 2))


@_timed
def check_hygiene() -> CheckResult:
    derr = float(np.max(derivative_errors()))
    ext, _ = E.forced_pendulum()
    saddle = E.pendulum_saddle(ext)
    recs = [saddle, *E.end_orbits(E.bump_system())]
    symp = max(symplecticity(r) for r in recs)
    lam = np.sort(np.abs(saddle.multipliers))
    big, small = lam[-1], lam[0]
    eb = abs(big - math.exp(2 * math.pi)) / math.exp(2 * math.pi)
    es = abs(small - math.exp(-2 * math.pi)) / math.exp(-2 * math.pi)
    ok = derr < 1e-6 and symp < 1e-7 and eb < 1e-6 and es < 1e-6 and saddle.unit_count == 2
    return CheckResult(9, "numerics hygiene", ok,
                       f"derivative vs FD {derr:.1e}, symplecticity {symp:.1e}, "
                       f"multipliers {big:.7f}/{small:.3e} (rel {eb:.1e}, {es:.1e}), "
                       f"unit multiplicity {saddle.unit_count}")


def potential_consistency(tau: float = 1e-3) -> tuple[float, float]:
    """(dL(X_A), beta(X_A)) for A = H0 on the forced pendulum at a lifted point."""
    ext, orbit = E.forced_pendulum()
    A = ext.parse("p^2/2 + cos(q)")
    m0 = orbit(0.0).copy()
    m = orbit(0.4).copy()
    m[ext.index("t")] = 0.9
    flow_a = ext.with_h1(A)
    ends = [dyn.propagate(flow_a, "H1", m, 0.0, s * tau, 1e-13) for s in (1.0, -1.0)]
    L = [mk.melnikov_potential(ext, None, orbit, m0, y) for y in ends]
    s, _ = mk._locate_on_manifold(ext, orbit, m)
    return (L[0] - L[1]) / (2 * tau), mk.melnikov_convergent(ext, A, orbit, s, 0.9).value


@_timed
def check_potential() -> CheckResult:
    dl, beta = potential_consistency()
    sys = E.bump_system()
    orb = E.heteroclinic(sys)
    try:
        mk.melnikov_potential(sys, None, orb, orb(0.0), orb(1.0))
        guarded = False
    except mk.GuardError:
        guarded = True
    ok = abs(dl - beta) < 1e-5 and guarded
    return CheckResult(10, "potential and guard", ok,
                       f"dL(X_A)-beta(X_A) = {dl - beta:.1e}, heteroclinic guard "
                       f"{'raised' if guarded else 'NOT raised'}")


CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_periods,
    2: check_counting,
    3: check_pendulum,
    4: check_exactness,
    5: check_shift,
    6: check_tangent,
    7: check_modes,
    8: check_splitting,
    9: check_hygiene,
    10: check_potential,
}

GROUPS = {
    "example": (1, 2),
    "melnikov": (3, 4, 5, 6, 7),
    "splitting": (8,),
    "numerics": (9,),
    "potential": (10,),
}


def run(numbers=None, echo: Callable[[str], None] | None = None) -> list[CheckResult]:
    out = []
    for n in numbers or sorted(CHECKS):
        try:
            res = CHECKS[n]()
        except Exception as exc:  # a crash is a failed check, reported by name
            res = CheckResult(n, CHECKS[n].__name__, False, f"error: {type(exc).__name__}: {exc}")
        out.append(res)
        if echo is not None:
            echo(res.line())
    return out
