"""Flows, variational equations, periodic orbits and return maps.

Integration uses scipy's DOP853 (explicit Runge-Kutta 8(5,3)) with equal
relative and absolute tolerance. Stored trajectories interpolate between
samples with cubic Hermite polynomials built from the vector field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .phase import SystemDef, Which, wrap_difference

__all__ = [
    "FlowError",
    "NoReturnError",
    "NewtonError",
    "Trajectory",
    "PeriodicOrbitRecord",
    "flow",
    "propagate",
    "variational_flow",
    "find_periodic_orbit",
    "classify_multipliers",
    "return_time",
    "stroboscopic_map",
    "stormer_verlet",
    "symplectic_matrix",
    "trajectory_csv",
    "monodromy_json",
]

DEFAULT_TOL = 1e-12
ORBIT_TOL = 1e-10
CLUSTER_TOL = 1e-6


class FlowError(RuntimeError):
    """Integration failure (step size underflow, blow-up)."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message if t is None else f"{message} (at t = {t:.17g})")
        self.t = t


class NoReturnError(RuntimeError):
    pass


class NewtonError(RuntimeError):
    pass


def _check_tol(tol: float) -> None:
    if not 1e-14 <= tol <= 1e-6:
        raise ValueError(f"tolerance {tol} outside [1e-14, 1e-6]")


def symplectic_matrix(n: int) -> np.ndarray:
    """Canonical Omega for the (q1, p1, ..., qn, pn) ordering."""
    om = np.zeros((2 * n, 2 * n))
    for i in range(n):
        om[2 * i, 2 * i + 1] = 1.0
        om[2 * i + 1, 2 * i] = -1.0
    return om


@dataclass
class Trajectory:
    """Samples of a flow with strictly increasing times ``s``."""

    s: np.ndarray
    y: np.ndarray  # (N, 2n)
    dy: np.ndarray  # (N, 2n)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        self._spline = CubicHermiteSpline(self.s, self.y, self.dy, axis=0)

    def __call__(self, s):
        """Hermite-interpolated state(s) at time(s) ``s``."""
        s = np.asarray(s, dtype=float)
        if np.any(s < self.s[0] - 1e-12) or np.any(s > self.s[-1] + 1e-12):
            raise ValueError("requested time outside the stored span")
        return self._spline(s)

    @property
    def start(self) -> np.ndarray:
        return self.y[0]

    @property
    def end(self) -> np.ndarray:
        return self.y[-1]


def _solve(fun, t_span, y0, tol, **kw):
    sol = solve_ivp(fun, t_span, y0, method="DOP853", rtol=tol, atol=tol, **kw)
    if sol.status == -1:
        t_fail = float(sol.t[-1]) if sol.t.size else t_span[0]
        raise FlowError(f"integration failed: {sol.message}", t_fail)
    return sol


def flow(
    sys: SystemDef,
    which: Which,
    m: Sequence[float],
    t_span: tuple[float, float],
    tol: float = DEFAULT_TOL,
    sample_dt: float | None = None,
) -> Trajectory:
    """Integrate X_H from ``m`` over ``t_span`` (absolute times).

    Samples are the accepted steps, refined to spacing ``sample_dt`` (using
    the integrator's own dense output) when given.
    """
    _check_tol(tol)
    t0, t1 = map(float, t_span)
    if not (math.isfinite(t0) and math.isfinite(t1)):
        raise ValueError("t_span must be finite")
    y0 = np.asarray(m, dtype=float)
    f = sys.field_function(which)
    if t0 == t1:
        s = np.array([t0])
        return Trajectory(s, y0[None, :], f(t0, y0)[None, :], {"nfev": 1, "steps": 0})
    kw = {}
    if sample_dt is not None:
        kw["dense_output"] = True
    sol = _solve(f, (t0, t1), y0, tol, **kw)
    ts = sol.t
    ys = sol.y.T
    if sample_dt is not None:
        n = max(2, int(math.ceil(abs(t1 - t0) / sample_dt)) + 1)
        grid = np.linspace(t0, t1, n)
        ts = np.unique(np.concatenate([ts, grid]))
        if t1 < t0:
            ts = ts[::-1]
        ys = sol.sol(ts).T
        ys[0], ys[-1] = sol.y[:, 0], sol.y[:, -1]
    dys = np.array([f(t, y) for t, y in zip(ts, ys)])
    order = np.argsort(ts)
    meta = {"tol": tol, "nfev": int(sol.nfev), "steps": int(sol.t.size - 1),
            "method": "DOP853", "t0": t0, "t1": t1}
    traj = Trajectory(ts[order], ys[order], dys[order], meta)
    if not sys.time_dependent and which == "H0":
        e = sys.energy("H0")(ys.T)
        traj.meta["energy_drift"] = float(np.max(np.abs(e - e[0])))
    return traj


def propagate(
    sys: SystemDef,
    which: Which,
    points,
    t0: float,
    t1: float,
    tol: float = DEFAULT_TOL,
) -> np.ndarray:
    """Endpoints of the flow for one point (2n,) or a batch (N, 2n)."""
    _check_tol(tol)
    Y = np.asarray(points, dtype=float)
    single = Y.ndim == 1
    if single:
        Y = Y[None, :]
    if t0 == t1:
        return Y[0].copy() if single else Y.copy()
    N, d = Y.shape
    f = sys.field_function(which)

    def rhs(t, z):
        return f(t, z.reshape(d, N)).ravel()

    sol = _solve(rhs, (t0, t1), Y.T.ravel(), tol)
    out = sol.y[:, -1].reshape(d, N).T
    return out[0] if single else out


def variational_flow(
    sys: SystemDef,
    which: Which,
    m: Sequence[float],
    t_span: tuple[float, float],
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, np.ndarray]:
    """Endpoint and fundamental matrix of the linearised flow."""
    _check_tol(tol)
    d = sys.dim
    y0 = np.asarray(m, dtype=float)
    t0, t1 = map(float, t_span)
    if t0 == t1:
        return y0.copy(), np.eye(d)
    f = sys.field_function(which)
    hess = sys.hessian_function(which)
    J = symplectic_matrix(sys.n)

    def rhs(t, z):
        y = z[:d]
        phi = z[d:].reshape(d, d)
        return np.concatenate([f(t, y), (J @ hess(t, y) @ phi).ravel()])

    sol = _solve(rhs, (t0, t1), np.concatenate([y0, np.eye(d).ravel()]), tol)
    z = sol.y[:, -1]
    return z[:d], z[d:].reshape(d, d)


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass
class PeriodicOrbitRecord:
    m0: np.ndarray
    period: float
    monodromy: np.ndarray
    multipliers: np.ndarray
    classification: str
    residual: float
    which: Which = "H0"
    iterations: int = 0
    section: tuple[int, float] | None = None

    @property
    def unit_count(self) -> int:
        return int(np.sum(np.abs(self.multipliers - 1.0) < CLUSTER_TOL))

    @property
    def pairing_error(self) -> float:
        """Worst relative mismatch between each multiplier and 1/(its partner)."""
        lam = self.multipliers
        worst = 0.0
        for a in lam:
            inv = 1.0 / a
            worst = max(worst, float(np.min(np.abs(lam - inv)) / max(1.0, abs(inv))))
        return worst

    def to_dict(self) -> dict:
        return {
            "m0": [float(x) for x in self.m0],
            "period": float(self.period),
            "residual": float(self.residual),
            "classification": self.classification,
            "multipliers": [[float(z.real), float(z.imag)] for z in self.multipliers],
            "monodromy": self.monodromy.tolist(),
            "iterations": self.iterations,
        }


def classify_multipliers(multipliers, cluster_tol: float = CLUSTER_TOL) -> str:
    lam = np.asarray(multipliers)
    near_one = np.abs(lam - 1.0) < cluster_tol
    if int(near_one.sum()) != 2:
        return "degenerate"
    rest = lam[~near_one]
    if rest.size == 0:
        return "nondegenerate-nonhyperbolic"
    on_circle = np.abs(np.abs(rest) - 1.0) <= cluster_tol
    if np.any(on_circle):
        return "nondegenerate-nonhyperbolic"
    return "nondegenerate-hyperbolic"


def _section_index(sys: SystemDef, section) -> tuple[int, float]:
    key, value = section
    idx = sys.index(key) if isinstance(key, str) else int(key)
    return idx, float(value)


def _section_residual(sys: SystemDef, idx: int, value: float, y: np.ndarray) -> float:
    c = sys.circumferences[idx]
    d = y[idx] - value
    if c > 0:
        d = (d + 0.5 * c) % c - 0.5 * c
    return float(d)


def find_periodic_orbit(
    sys: SystemDef,
    guess: Sequence[float],
    period: float | None = None,
    section=None,
    which: Which = "H0",
    tol: float = DEFAULT_TOL,
    orbit_tol: float = ORBIT_TOL,
    max_iter: int = 50,
    energy: float | None = None,
) -> PeriodicOrbitRecord:
    """Newton solve of phi^tau(m) = m with a period or section phase condition.

    ``section`` is ``(coordinate name or index, value)``; without either
    argument the circle coordinate moving fastest at the guess is used at
    its guess value. Linear systems are solved in the least-squares sense
    so that families of orbits (energy levels) do not make the step
    singular. ``energy`` pins the member of such a family.
    """
    if sys.time_dependent:
        raise ValueError("periodic orbits are sought for autonomous systems")
    m = np.asarray(guess, dtype=float).copy()
    d = sys.dim
    if period is None:
        if section is None:
            circ = np.nonzero(sys.circumferences)[0]
            if circ.size == 0:
                raise ValueError("give a period or a section for systems without circle coordinates")
            speed = np.abs(sys.field_function(which)(0.0, m)[circ])
            k = int(circ[int(np.argmax(speed))])
            section = (k, float(m[k]))
        idx, value = _section_index(sys, section)
        tau = return_time(sys, m, (idx, value), which=which, tol=tol)
    else:
        idx, value = None, None
        tau = float(period)
    f = sys.field_function(which)
    if energy is not None:
        ham = sys.energy(which)
        grad = sys.gradient(sys.hamiltonian(which))

    def residual(m, tau):
        end, phi = variational_flow(sys, which, m, (0.0, tau), tol)
        r = wrap_difference(sys, end - m)
        if idx is not None:
            r = np.append(r, _section_residual(sys, idx, value, m))
        if energy is not None:
            r = np.append(r, float(ham(m)) - energy)
        return r, end, phi

    r, end, phi = residual(m, tau)
    it = 0
    while np.linalg.norm(r) >= orbit_tol:
        if it >= max_iter:
            raise NewtonError(f"Newton did not converge in {max_iter} iterations "
                              f"(residual {np.linalg.norm(r):.3e})")
        if idx is None:
            jac = phi - np.eye(d)
        else:
            jac = np.zeros((d + 1, d + 1))
            jac[:d, :d] = phi - np.eye(d)
            jac[:d, d] = f(0.0, end)
            jac[d, idx] = 1.0
        if energy is not None:
            row = np.zeros(jac.shape[1])
            row[:d] = np.asarray(grad(m), dtype=float).ravel()
            jac = np.vstack([jac, row])
        step = np.linalg.lstsq(jac, -r, rcond=1e-13)[0]
        m = m + step[:d]
        if idx is not None:
            tau = tau + step[d]
            if not tau > 0:
                raise NewtonError("period became nonpositive during Newton iteration")
        r, end, phi = residual(m, tau)
        it += 1
        if not np.all(np.isfinite(r)):
            raise NewtonError("Newton iteration produced non-finite values")
    lam = np.linalg.eigvals(phi)
    lam = lam[np.argsort(-np.abs(lam))]
    return PeriodicOrbitRecord(
        m0=m, period=float(tau), monodromy=phi, multipliers=lam,
        classification=classify_multipliers(lam), residual=float(np.linalg.norm(r)),
        which=which, iterations=it, section=None if idx is None else (idx, value),
    )


def return_time(
    sys: SystemDef,
    point: Sequence[float],
    section,
    which: Which = "H0",
    tol: float = DEFAULT_TOL,
    t_max: float = 1e3,
    t0: float = 0.0,
) -> float:
    """First time the flow from ``point`` re-crosses ``section`` in the same direction."""
    idx, value = _section_index(sys, section)
    y0 = np.asarray(point, dtype=float)
    f = sys.field_function(which)
    speed = float(f(t0, y0)[idx])
    if abs(speed) < 1e-12:
        raise NoReturnError("flow is not transversal to the section at this point "
                            "(no return: fixed point or tangency)")
    c = sys.circumferences[idx]
    direction = 1.0 if speed > 0 else -1.0
    if c > 0:
        k0 = round((y0[idx] - value) / c)
        levels = [value + (k0 + j) * c for j in (-1, 0, 1)]
    else:
        levels = [value]
    events = []
    for level in levels:
        def g(t, y, level=level):
            return y[idx] - level

        g.terminal = True
        g.direction = direction
        events.append(g)
    # leave the section before arming the events
    skip = min(1e-6, 1e-3 / abs(speed))
    y1 = propagate(sys, which, y0, t0, t0 + skip, tol)
    sol = _solve(f, (t0 + skip, t0 + t_max), y1, tol, events=events)
    hits = [te[0] for te in sol.t_events if te.size]
    if not hits:
        raise NoReturnError(f"no return to the section within t_max = {t_max}")
    return float(min(hits) - t0)


# ---------------------------------------------------------------------------
# forced systems


def stroboscopic_map(
    sys: SystemDef,
    m: Sequence[float],
    t0: float,
    eps: float,
    tol: float = DEFAULT_TOL,
    inverse: bool = False,
) -> np.ndarray:
    """Flow of H0 + eps*H1 from phase ``t0`` over one forcing period (or back)."""
    if not sys.time_dependent:
        raise ValueError("stroboscopic map needs a time-dependent system")
    T = sys.forcing_period
    return propagate(sys, float(eps), m, t0, t0 - T if inverse else t0 + T, tol)


def stormer_verlet(
    sys: SystemDef,
    m: Sequence[float],
    t_span: tuple[float, float],
    h: float,
    which: Which = "H0",
) -> np.ndarray:
    """Fixed-step Stormer-Verlet for separable Hamiltonians (cross-check only)."""
    from . import expr as ex

    H = sys.hamiltonian(which)
    H = ex.substitute(H, sys.params)
    for p in sys.pairs:
        for p2 in sys.pairs:
            mixed = ex.differentiate(ex.differentiate(H, p.position), p2.momentum)
            if not (isinstance(mixed, ex.Const) and mixed.value == 0.0):
                raise ValueError("Stormer-Verlet needs a separable Hamiltonian")
    grad = sys.gradient(H)
    t0, t1 = t_span
    nsteps = max(1, int(round(abs(t1 - t0) / h)))
    h = (t1 - t0) / nsteps
    y = np.asarray(m, dtype=float).copy()
    q, p = slice(0, None, 2), slice(1, None, 2)
    t = t0
    for _ in range(nsteps):
        y[p] -= 0.5 * h * grad(y, t)[q]
        y[q] += h * grad(y, t + 0.5 * h)[p]
        t += h
        y[p] -= 0.5 * h * grad(y, t)[q]
    return y


# ---------------------------------------------------------------------------
# exports


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def trajectory_csv(sys: SystemDef, traj_or_samples, s=None) -> str:
    """CSV text ``s,q1,p1,...`` with 17 significant digits."""
    if isinstance(traj_or_samples, Trajectory):
        s, y = traj_or_samples.s, traj_or_samples.y
    else:
        y = np.asarray(traj_or_samples)
    header = ",".join(["s"] + sys.coordinate_names)
    lines = [header]
    for si, yi in zip(s, y):
        lines.append(",".join([_fmt(si)] + [_fmt(v) for v in yi]))
    return "\n".join(lines) + "\n"


def monodromy_json(record: PeriodicOrbitRecord) -> str:
    return json.dumps({"rows": [[float(v) for v in row] for row in record.monodromy]}) + "\n"
