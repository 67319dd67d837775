"""Standard objects for the bump example and the forced pendulum.

The bump example lives on pairs (t, eta), (x, xi) with a hyperbolic
periodic orbit over each saddle x = 0 and x = 2pi of the (x, xi) part. We
use the lower-branch connection, leaving the x = 2pi orbit and arriving at
the x = 0 orbit, through (t, eta, x, xi) = (0, 0, pi, -sqrt 2).
"""

from __future__ import annotations

import math

import numpy as np

from . import dynamics as dyn
from . import melnikov as mk
from . import separatrix as sp
from .phase import SystemDef, catalog, extend_periodic, bump_equal_periods

BASE = (0.0, 0.0, math.pi, -math.sqrt(2.0))


def bump_system(c: float = 0.5, delta: float = 0.3) -> SystemDef:
    if c == 0.0:
        return bump_equal_periods(delta)
    return catalog("paper-example", {"c": c, "delta": delta})


def end_orbits(sys: SystemDef, eta: float = 0.0):
    """Records of the orbits over x = 0 (target) and x = 2pi (source)."""
    target = dyn.find_periodic_orbit(sys, [0.0, eta, 0.0, 0.0])
    source = dyn.find_periodic_orbit(sys, [0.0, eta, 2.0 * math.pi, 0.0])
    return target, source


def heteroclinic(sys: SystemDef, records=None) -> sp.ConnectingOrbit:
    target, source = records or end_orbits(sys)
    return sp.orbit_through(sys, BASE, sp.EndOrbit.periodic(sys, source),
                            sp.EndOrbit.periodic(sys, target))


def frame(sys: SystemDef, orbit: sp.ConnectingOrbit) -> sp.ConservedFrame:
    return sp.conserved_frame(sys, [sys.H0, "eta"], orbit)


def report(c: float = 0.5, delta: float = 0.3, eta: float = 0.01) -> dict:
    """Periods of both orbits at level eta, and the critical-integral count at eta = 0."""
    sys = bump_system(c, delta)
    at_eta = end_orbits(sys, eta)
    recs = end_orbits(sys, 0.0)
    orbit = heteroclinic(sys, recs)
    rep = mk.critical_integral_basis(sys, frame(sys, orbit), *recs)
    return {
        "system": sys.name,
        "c": c,
        "delta": delta,
        "eta": eta,
        "period_x0": at_eta[0].period,
        "period_x2pi": at_eta[1].period,
        "expected_x0": 1.0 / (1.0 + c),
        "expected_x2pi": 1.0,
        "classification": [r.classification for r in at_eta],
        "counting": rep.to_dict(),
    }


def forced_pendulum(omega: float = 1.0, h1: str | None = None):
    """(extended system, lifted analytic separatrix with clock 0 at s = 0)."""
    pend = catalog("pendulum", {"omega": omega}, h1)
    ext = extend_periodic(pend)
    return ext, sp.analytic_separatrix("pendulum").lift(ext, 0.0)


def pendulum_amplitude() -> float:
    """Closed-form amplitude 2 pi sech(pi / 2) of the pendulum function at omega = 1."""
    return 2.0 * math.pi / math.cosh(0.5 * math.pi)


def pendulum_saddle(ext: SystemDef) -> dyn.PeriodicOrbitRecord:
    return dyn.find_periodic_orbit(ext, np.zeros(4))
