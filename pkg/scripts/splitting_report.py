"""Energy gap of the perturbed pendulum manifolds against eps * M(t0) over several eps."""

import argparse
import json
import math
from dataclasses import dataclass, field

import numpy as np

from melform.acceptance import PHASES, pendulum_splitting


@dataclass
class SplitConfig:
    eps: tuple = (1e-2, 3e-3, 1e-3)
    phases: tuple = field(default_factory=lambda: PHASES)
    out: str | None = None


def run(cfg: SplitConfig):
    rep = pendulum_splitting(cfg.eps, cfg.phases)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(rep.to_json())
    return rep


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", default="1e-2,3e-3,1e-3")
    ap.add_argument("--out", help="write the full report as JSON")
    a = ap.parse_args()
    rep = run(SplitConfig(tuple(float(x) for x in a.eps.split(",")), out=a.out))
    print(f"{'eps':>8} {'max dev':>9} {'rms dev':>9}")
    for e, dev, rms in zip(rep.eps, rep.deviations, rep.rms_residual):
        print(f"{e:8.0e} {np.max(dev):9.2e} {rms:9.2e}")
    print(f"fitted order {rep.fitted_order:.2f} (1 means the gap is eps*M + O(eps^2))")
    print(json.dumps({"t0/pi": [round(t / math.pi, 3) for t in rep.t0]}))
