"""Bump example, A = eta: boundary terms plus the prescribed integral against the
finite-difference derivative of the directly computed energy gap."""

import argparse
import json
import math
import time
from dataclasses import asdict, dataclass

from melform import example as E
from melform import melnikov as mk
from melform import splitting as spl


@dataclass
class OracleConfig:
    c: float = 0.5
    delta: float = 0.3
    h: float = 1e-4  # eps step of the central difference
    fd_step: float = 1e-4  # eps step of the orbit continuation in the boundary terms


def run(cfg: OracleConfig) -> dict:
    t = time.perf_counter()
    sys = E.bump_system(cfg.c, cfg.delta)
    orbit = E.heteroclinic(sys)
    fr = E.frame(sys, orbit)
    b = mk.boundary_terms(sys, "eta", orbit, fr, h=cfg.fd_step)
    p = mk.melnikov_prescribed(sys, "eta", orbit)
    beta = b.plus - b.minus + p.value
    t_form = time.perf_counter() - t
    t = time.perf_counter()
    g = spl.gap_derivative(sys, "eta", E.BASE, [0, 0, 2 * math.pi, 0], [0, 0, 0, 0], h=cfg.h)
    t_gap = time.perf_counter() - t
    return {"config": asdict(cfg), "boundary_plus": b.plus, "boundary_minus": b.minus,
            "prescribed": p.value, "prescribed_error": p.error, "beta": beta,
            "gap_derivative": g.value, "gap_derivative_error": g.error,
            "relative_difference": abs(beta - g.value) / abs(g.value),
            "seconds": {"form": t_form, "gap": t_gap}}


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--c", type=float, default=0.5)
    ap.add_argument("--delta", type=float, default=0.3)
    ap.add_argument("--h", type=float, default=1e-4)
    a = ap.parse_args()
    print(json.dumps(run(OracleConfig(a.c, a.delta, a.h)), indent=2))
