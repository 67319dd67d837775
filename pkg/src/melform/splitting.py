"""Direct computation of perturbed invariant manifolds on a clock section.

Everything here is independent of the Mel'nikov integrals: manifolds are
grown as polylines under the return map to a section {t = const}, and
their separation is measured on a transversal. The return map integrates
dy/dt = X(y) / X_t(y) over one clock period, so it covers both periodically
forced systems (the stroboscopic map) and autonomous systems with a clock
pair (t, eta), where eta is recovered from the energy level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import dynamics as dyn
from .phase import SystemDef

__all__ = [
    "SIGN",
    "SectionMap",
    "perturbed_fixed_point",
    "ManifoldPolyline",
    "manifold_polyline",
    "Crossing",
    "EnergyGap",
    "energy_gap",
    "GapDerivative",
    "gap_derivative",
    "SplittingReport",
    "first_order_check",
    "polyline_csv",
]

# Calibrated once on the forced pendulum: A(stable) - A(unstable) = SIGN * eps * M + O(eps^2).
SIGN = 1.0

MAP_TOL = 1e-12


class SectionMap:
    """Return map of H0 + eps*H1 to the section {t = t_section}.

    Section points are the two non-clock coordinates. For an autonomous
    system with a clock pair the momentum eta is solved from H_eps = energy.
    """

    def __init__(self, sys: SystemDef, eps: float, t_section: float = 0.0,
                 energy: float = 0.0, tol: float = MAP_TOL):
        self.sys, self.eps, self.t_section = sys, float(eps), float(t_section)
        self.energy, self.tol = float(energy), float(tol)
        if sys.time_dependent:
            if sys.n != 1:
                raise ValueError("section maps need one degree of freedom besides the clock")
            self.period = float(sys.forcing_period)
            self.free = [0, 1]
            self.kt = self.ke = None
        else:
            if "t" not in sys.coordinate_names or sys.n != 2:
                raise ValueError("section maps need a clock pair (t, eta) and one more pair")
            self.kt = sys.index("t")
            self.ke = self.kt + 1
            self.period = float(sys.circumferences[self.kt])
            if not self.period > 0:
                raise ValueError("the clock t must live on a circle")
            self.free = [i for i in range(4) if i not in (self.kt, self.ke)]
        self.labels = [sys.coordinate_names[i] for i in self.free]

    def lift(self, Z, t: float | None = None) -> np.ndarray:
        """Full phase points (N, dim) above section points Z (N, 2) at clock t."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if self.kt is None:
            return Z.copy()
        Y = np.zeros((len(Z), 4))
        Y[:, self.free] = Z
        Y[:, self.kt] = self.t_section if t is None else t
        H = self.sys.energy(self.eps)
        grad_h0 = self.sys.gradient(self.sys.H0)
        grad_h1 = self.sys.gradient(self.sys.H1)
        for _ in range(30):
            r = np.asarray(H(Y.T), dtype=float) - self.energy
            g = (np.asarray(grad_h0(Y.T), dtype=float)[self.ke]
                 + self.eps * np.asarray(grad_h1(Y.T), dtype=float)[self.ke])
            step = r / g
            Y[:, self.ke] -= step
            if np.max(np.abs(step)) <= 1e-15 * (1.0 + np.max(np.abs(Y[:, self.ke]))):
                break
        return Y

    def advance(self, Z, k: int) -> np.ndarray:
        """k-fold return map (k < 0 for the inverse), batched over rows of Z."""
        return self.flow(Z, self.t_section, self.t_section + k * self.period)

    def flow(self, Z, t0: float, t1: float) -> np.ndarray:
        """Section coordinates carried from clock t0 to clock t1."""
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if t0 == t1:
            return Z.copy()
        if self.kt is None:
            return dyn.propagate(self.sys, self.eps, Z, t0, t1, self.tol)
        f = self.sys.field_function(self.eps)
        rest = [self.ke] + self.free
        Y = self.lift(Z, t0)
        N = len(Y)
        full = np.empty((4, N))

        def rhs(t, w):
            full[self.kt] = t
            full[rest] = w.reshape(3, N)
            v = f(0.0, full)
            return (v[rest] / v[self.kt]).ravel()

        sol = dyn._solve(rhs, (t0, t1), Y[:, rest].T.ravel(), self.tol)
        return sol.y[:, -1].reshape(3, N)[1:].T.copy()

    def value(self, e, Z) -> np.ndarray:
        """An expression evaluated at the lifted section points."""
        e = self.sys.parse(e) if isinstance(e, str) else e
        Y = self.lift(Z)
        return np.asarray(self.sys.evaluator(e)(Y.T, self.t_section), dtype=float) * np.ones(len(Y))

    def jacobian(self, z, k: int = 1, h: float = 1e-6) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        pts = np.array([z + h * e for e in np.eye(2)] + [z - h * e for e in np.eye(2)])
        out = self.advance(pts, k)
        return (out[:2] - out[2:]).T / (2.0 * h)


def perturbed_fixed_point(smap: SectionMap, guess, tol: float = 1e-10,
                          segments: int = 8, max_iter: int = 40) -> np.ndarray:
    """Fixed point of the return map with P(z) - z below ``tol``.

    Newton runs on a multiple-shooting system over ``segments`` equal
    pieces of the clock period, so each piece stretches errors only by
    the K-th root of the multiplier; ``guess`` seeds every node.  The
    default ``tol`` sits just above the integrator floor (local tolerance
    times the unstable multiplier, about 5e-12 for the forced pendulum).
    """
    K = int(segments)
    T = smap.period
    times = smap.t_section + T * np.arange(K + 1) / K
    Z = np.tile(np.asarray(guess, dtype=float), (K, 1))
    h = 1e-7
    eye = np.eye(2)
    res = np.inf
    for _ in range(max_iter):
        R = np.zeros(2 * K)
        Jac = np.zeros((2 * K, 2 * K))
        for i in range(K):
            pts = np.vstack([Z[i], Z[i] + h * eye, Z[i] - h * eye])
            out = smap.flow(pts, times[i], times[i + 1])
            j = (i + 1) % K
            R[2 * i:2 * i + 2] = out[0] - Z[j]
            Jac[2 * i:2 * i + 2, 2 * i:2 * i + 2] = (out[1:3] - out[3:5]).T / (2 * h)
            Jac[2 * i:2 * i + 2, 2 * j:2 * j + 2] -= eye
        if np.max(np.abs(R)) < 1e-4 * tol:
            break
        Z = Z - np.linalg.solve(Jac, R).reshape(K, 2)
        if not np.all(np.isfinite(Z)):
            break
    z = Z[0]
    if np.all(np.isfinite(z)):
        res = float(np.max(np.abs(smap.advance(z, 1)[0] - z)))
        if res < tol:
            return z
    raise dyn.NewtonError(f"fixed point of the section map not found (residual {res:.3e})")


def _eigen(J: np.ndarray) -> tuple[float, np.ndarray]:
    """Expanding eigenpair of a 2x2 map Jacobian."""
    w, V = np.linalg.eig(J)
    if np.iscomplexobj(w) and np.any(np.abs(w.imag) > 1e-12):
        raise ValueError("fixed point is not hyperbolic (complex multipliers)")
    w, V = w.real, V.real
    i = int(np.argmax(np.abs(w)))
    if not abs(w[i]) > 1.0 + 1e-9:
        raise ValueError("fixed point is not hyperbolic")
    return float(w[i]), V[:, i] / np.linalg.norm(V[:, i])


@dataclass
class ManifoldPolyline:
    """Vertices P^(k*step)(seed(u)) of a one-dimensional manifold branch.

    seed(u) = fixed_point + branch * delta0 * lam^u * v for u in [0, 1],
    so level k covers one fundamental domain; levels are concatenated in
    order of k.
    """

    smap: SectionMap
    side: str
    fixed_point: np.ndarray
    direction: np.ndarray
    multiplier: float
    branch: float
    delta0: float
    step: int
    points: np.ndarray
    u: np.ndarray
    k: np.ndarray
    truncated: bool = False

    @property
    def arclen(self) -> np.ndarray:
        d = np.linalg.norm(np.diff(self.points, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(d)])

    def seed(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        scale = self.branch * self.delta0 * self.multiplier ** u
        return self.fixed_point[None, :] + scale[:, None] * self.direction[None, :]

    def evaluate(self, u, k: int) -> np.ndarray:
        sgn = 1 if self.side == "unstable" else -1
        return self.smap.advance(self.seed(u), sgn * self.step * int(k))


def _turning(P: np.ndarray) -> np.ndarray:
    a, b = P[1:-1] - P[:-2], P[2:] - P[1:-1]
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    c = np.einsum("ij,ij->i", a, b) / np.maximum(na * nb, 1e-300)
    return np.arccos(np.clip(c, -1.0, 1.0))


def manifold_polyline(
    smap: SectionMap,
    fixed_point,
    side: str,
    target_arclen: float,
    branch: float = 1.0,
    delta0: float = 1e-6,
    max_spacing: float = 0.05,
    max_angle: float = 0.2,
    budget: int = 200_000,
    cut: Callable[[np.ndarray], int | None] | None = None,
    max_levels: int = 200,
) -> ManifoldPolyline:
    """Grow the stable or unstable branch of a section-map fixed point.

    Vertices are inserted wherever neighbours are more than ``max_spacing``
    apart or the polyline turns by more than ``max_angle``. Growth ends at
    ``target_arclen`` or at the vertex index returned by ``cut(points)``;
    running out of the vertex budget or of levels sets ``truncated``.
    Only the part of the last level before the end point is refined.
    """
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    fp = np.asarray(fixed_point, dtype=float)
    sgn = 1 if side == "unstable" else -1
    lam, v = _eigen(smap.jacobian(fp, sgn))
    step = 1 if lam > 0 else 2
    lam = abs(lam) ** step
    if delta0 * lam > 0.1:
        raise ValueError("delta0 too large for this multiplier")
    line = ManifoldPolyline(smap, side, fp, v, lam, 1.0 if branch >= 0 else -1.0, delta0,
                            step, np.empty((0, 2)), np.empty(0), np.empty(0, dtype=int))
    P_all, U_all, K_all = [], [], []
    total, used = 0.0, 0
    u = np.linspace(0.0, 1.0, 9)
    pts = line.seed(u)
    truncated = done = False
    for k in range(max_levels):
        if k > 0:
            pts = smap.advance(pts, sgn * step)
        if not np.all(np.isfinite(pts)):
            raise FloatingPointError("manifold left the integrable region")
        head = P_all[-1][-1:] if P_all else pts[:1]
        offset = sum(len(x) for x in P_all)
        while True:
            joined = np.vstack([head, pts])
            seg = np.linalg.norm(np.diff(joined, axis=0), axis=1)
            # last vertex of this level that is still needed
            end = len(pts) - 1
            over = np.nonzero(total + np.cumsum(seg) >= target_arclen)[0]
            if over.size:
                end = min(end, int(over[0]))
            if cut is not None:
                j = cut(np.vstack(P_all + [pts]))
                if j is not None and j >= offset:
                    end = min(end, j - offset)
            done = end < len(pts) - 1 or over.size > 0 or (
                cut is not None and j is not None and j >= offset)
            seg = seg[1:]
            turn = _turning(joined)[1:] if len(joined) > 2 else np.zeros(0)
            bad = seg > max_spacing
            if turn.size:
                bad[:-1] |= turn[:len(bad) - 1] > max_angle
                bad[1:] |= turn[:len(bad) - 1] > max_angle
            bad &= np.diff(u) > 1e-13
            bad[max(end, 0):] = False
            if not np.any(bad):
                break
            idx = np.nonzero(bad)[0]
            # subdivide in proportion to the excess spacing: fewer integration passes
            m = np.clip(np.ceil(seg[idx] / max_spacing), 2, 64).astype(int)
            if used + len(u) + int(np.sum(m - 1)) > budget:
                truncated = done = True
                break
            u_new = np.concatenate([u[i] + (u[i + 1] - u[i]) * np.arange(1, j2) / j2
                                    for i, j2 in zip(idx, m)])
            u = np.concatenate([u, u_new])
            pts = np.vstack([pts, line.evaluate(u_new, k)])
            order = np.argsort(u)
            u, pts = u[order], pts[order]
        if done:
            keep = min(len(u), end + 2)
            u, pts = u[:keep], pts[:keep]
        total += float(np.sum(np.linalg.norm(np.diff(np.vstack([head, pts]), axis=0), axis=1)))
        P_all.append(pts.copy())
        U_all.append(u.copy())
        K_all.append(np.full(len(u), k))
        used += len(u)
        if done:
            break
    else:
        truncated = True
    line.points = np.vstack(P_all)
    line.u = np.concatenate(U_all)
    line.k = np.concatenate(K_all)
    line.truncated = truncated
    return line


@dataclass
class Crossing:
    point: np.ndarray
    r: float
    u: float
    k: int
    index: int


def _crossings(P: np.ndarray, origin: np.ndarray, along: np.ndarray, window: float):
    normal = np.array([-along[1], along[0]])
    d = (P - origin) @ normal
    hits = np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]
    out = []
    for i in hits:
        if d[i] == d[i + 1]:
            continue
        a = d[i] / (d[i] - d[i + 1])
        x = P[i] + a * (P[i + 1] - P[i])
        r = float((x - origin) @ along)
        if abs(r) <= window:
            out.append((int(i), r))
    return out


def first_crossing(line: ManifoldPolyline, origin, along, window: float = 0.1,
                   u_tol: float = 1e-15, chord_tol: float = 1e-7) -> Crossing:
    """First crossing of the polyline with origin + r*along, |r| <= window, refined in u."""
    origin = np.asarray(origin, dtype=float)
    along = np.asarray(along, dtype=float) / np.linalg.norm(along)
    normal = np.array([-along[1], along[0]])
    hits = _crossings(line.points, origin, along, window)
    if not hits:
        raise dyn.NoReturnError(f"{line.side} manifold does not cross the transversal")
    i = hits[0][0]
    if line.k[i] != line.k[i + 1]:
        # the joint between two levels: both ends are the same point up to O(delta0^2)
        k = int(line.k[i + 1])
        ua, ub = 0.0, float(line.u[i + 1])
        pa = line.evaluate(ua, k)[0]
    else:
        k = int(line.k[i])
        ua, ub = float(line.u[i]), float(line.u[i + 1])
        pa = line.points[i]
    pb = line.points[i + 1]
    da, db = (pa - origin) @ normal, (pb - origin) @ normal
    for _ in range(60):
        # a chord shorter than chord_tol is straight to rounding accuracy
        if ub - ua <= u_tol or da == 0.0 or db == 0.0 or np.linalg.norm(pb - pa) < chord_tol:
            break
        uu = np.linspace(ua, ub, 34)[1:-1]
        pp = line.evaluate(uu, k)
        dd = (pp - origin) @ normal
        U = np.concatenate([[ua], uu, [ub]])
        Pp = np.vstack([pa, pp, pb])
        D = np.concatenate([[da], dd, [db]])
        j = int(np.nonzero(np.sign(D[:-1]) * np.sign(D[1:]) <= 0)[0][0])
        ua, ub, pa, pb, da, db = U[j], U[j + 1], Pp[j], Pp[j + 1], D[j], D[j + 1]
    a = 0.0 if da == db else da / (da - db)
    x = pa + a * (pb - pa)
    return Crossing(x, float((x - origin) @ along), float(ua + a * (ub - ua)), k, i)


@dataclass
class EnergyGap:
    gap: float
    value_stable: float
    value_unstable: float
    stable: Crossing
    unstable: Crossing
    fixed_points: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"gap": self.gap, "value_stable": self.value_stable,
                "value_unstable": self.value_unstable,
                "stable_point": self.stable.point.tolist(), "stable_r": self.stable.r,
                "unstable_point": self.unstable.point.tolist(), "unstable_r": self.unstable.r,
                "fixed_points": {k: v.tolist() for k, v in self.fixed_points.items()}}


def _branch(fp, v, toward) -> float:
    return 1.0 if (np.asarray(toward) - fp) @ v >= 0 else -1.0


def energy_gap(
    sys: SystemDef,
    eps: float,
    t_section: float,
    base,
    source_guess,
    target_guess,
    A=None,
    along=None,
    energies: tuple[float, float] = (0.0, 0.0),
    window: float = 0.1,
    delta0: float = 1e-6,
    max_spacing: float = 0.05,
    target_arclen: float = 50.0,
) -> EnergyGap:
    """A(stable crossing) - A(unstable crossing) on a transversal through ``base``.

    ``base``, ``source_guess`` and ``target_guess`` are section points. The
    unstable branch of the source fixed point and the stable branch of the
    target fixed point are grown toward ``base``; the transversal runs
    along ``along`` (default: the section part of grad A at the base).
    ``energies`` are the levels (target, source) for autonomous clocks.
    """
    A = sys.H0 if A is None else (sys.parse(A) if isinstance(A, str) else A)
    base = np.asarray(base, dtype=float)
    maps = {"stable": SectionMap(sys, eps, t_section, energies[0]),
            "unstable": SectionMap(sys, eps, t_section, energies[1])}
    if along is None:
        sm = maps["stable"]
        g = np.asarray(sys.gradient(A)(sm.lift(base)[0], t_section), dtype=float).ravel()
        along = g[sm.free]
    along = np.asarray(along, dtype=float) / np.linalg.norm(along)
    crossings, values, fps = {}, {}, {}
    for side, guess in (("stable", target_guess), ("unstable", source_guess)):
        sm = maps[side]
        fp = perturbed_fixed_point(sm, guess)
        sgn = 1 if side == "unstable" else -1
        _, v = _eigen(sm.jacobian(fp, sgn))
        def cut(P):
            hits = _crossings(P, base, along, window)
            return hits[0][0] + 1 if hits else None

        line = manifold_polyline(sm, fp, side, target_arclen, _branch(fp, v, base), delta0,
                                 max_spacing=max_spacing, cut=cut)
        c = first_crossing(line, base, along, window)
        crossings[side] = c
        values[side] = float(sm.value(A, c.point)[0])
        fps[side] = fp
    return EnergyGap(values["stable"] - values["unstable"], values["stable"],
                     values["unstable"], crossings["stable"], crossings["unstable"], fps)


def _time_average(sys: SystemDef, e, rec: dyn.PeriodicOrbitRecord) -> float:
    from .quadrature import integrate

    tr = dyn.flow(sys, rec.which, rec.m0, (0.0, rec.period), sample_dt=rec.period / 200)
    g = sys.evaluator(e)
    return integrate(lambda s: np.asarray(g(tr(s).T), dtype=float) * np.ones(len(s)),
                     0.0, rec.period, abs_tol=1e-13)[0] / rec.period


@dataclass
class GapDerivative:
    value: float
    error: float
    gaps: dict

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error,
                "gaps": {repr(k): v for k, v in self.gaps.items()}}


def gap_derivative(
    sys: SystemDef,
    A,
    base,
    source_point,
    target_point,
    h: float = 1e-4,
    along=None,
    **gap_kw,
) -> GapDerivative:
    """d/d(eps) of A(stable) - A(unstable) at eps = 0 by central differences.

    ``base``, ``source_point`` and ``target_point`` are full phase points
    (the latter two on the unperturbed end orbits). With a clock pair the
    perturbed end orbits live on the levels E0 + eps*<H1>, <H1> the time
    average over the unperturbed orbit. Default transversal: grad H0.
    """
    smap = SectionMap(sys, 0.0)
    base = np.asarray(base, dtype=float)
    if smap.kt is None:
        raise ValueError("gap derivatives need an autonomous system with a clock pair")
    t_s = float(base[smap.kt])
    zs = base[smap.free]
    levels = []
    for pt in (target_point, source_point):
        pt = np.asarray(pt, dtype=float)
        e0 = float(sys.energy("H0")(pt))
        rec = dyn.find_periodic_orbit(sys, pt, which=0.0, energy=e0)
        levels.append((e0, _time_average(sys, sys.H1, rec)))
    if along is None:
        along = np.asarray(sys.gradient(sys.H0)(base), dtype=float).ravel()[smap.free]
    gaps = {}
    for eps in (h, 0.0, -h):
        energies = tuple(e0 + eps * mean for e0, mean in levels)
        gaps[eps] = energy_gap(sys, eps, t_s, zs, np.asarray(source_point)[smap.free],
                               np.asarray(target_point)[smap.free], A, along, energies,
                               **gap_kw).gap
    fwd = (gaps[h] - gaps[0.0]) / h
    bwd = (gaps[0.0] - gaps[-h]) / h
    return GapDerivative((gaps[h] - gaps[-h]) / (2.0 * h), abs(fwd - bwd) / 2.0, gaps)


@dataclass
class SplittingReport:
    eps: list
    t0: list
    gaps: list  # gaps[i][j] at eps[i], t0[j]
    melnikov: list
    amplitude: float
    sign: float = SIGN

    @property
    def deviations(self) -> np.ndarray:
        g = np.asarray(self.gaps) / np.asarray(self.eps)[:, None]
        return np.abs(self.sign * g - np.asarray(self.melnikov)[None, :]) / self.amplitude

    @property
    def rms_residual(self) -> np.ndarray:
        return np.sqrt(np.mean(self.deviations ** 2, axis=1))

    @property
    def residual_ratio(self) -> float:
        r = self.rms_residual
        return float(r[0] / r[-1])

    @property
    def fitted_order(self) -> float:
        """Slope of log(rms residual) against log(eps); 1 means O(eps^2) absolute error."""
        x, y = np.log(np.asarray(self.eps)), np.log(self.rms_residual)
        return float(np.polyfit(x, y, 1)[0])

    def to_dict(self) -> dict:
        return {"eps": list(self.eps), "t0": list(self.t0), "gaps": self.gaps,
                "melnikov": list(self.melnikov), "amplitude": self.amplitude,
                "sign": self.sign, "deviations": self.deviations.tolist(),
                "rms_residual": self.rms_residual.tolist(),
                "residual_ratio": self.residual_ratio, "fitted_order": self.fitted_order}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def first_order_check(
    sys: SystemDef,
    base,
    source_guess,
    target_guess,
    melnikov: Callable[[float], float],
    amplitude: float,
    eps_values: Sequence[float] = (1e-2, 1e-3),
    phases: Sequence[float] | None = None,
    **gap_kw,
) -> SplittingReport:
    """Energy gaps over a grid of (eps, section phase) against eps * M(t0)."""
    if phases is None:
        T = float(sys.forcing_period) if sys.time_dependent else 1.0
        phases = [T / 4 + T * k / 5 for k in range(5)]
    gaps = [[energy_gap(sys, e, t0, base, source_guess, target_guess, **gap_kw).gap
             for t0 in phases] for e in eps_values]
    return SplittingReport(list(map(float, eps_values)), list(map(float, phases)), gaps,
                           [float(melnikov(t0)) for t0 in phases], float(amplitude))


def polyline_csv(line: ManifoldPolyline) -> str:
    a, b = line.smap.labels
    rows = [f"arclen,{a},{b}"]
    for s, (x, y) in zip(line.arclen, line.points):
        rows.append(f"{s:.17g},{x:.17g},{y:.17g}")
    return "\n".join(rows) + "\n"
