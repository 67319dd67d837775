"""Command-line front end.

Exit codes: 0 ok, 1 configuration error, 2 solver failure, 3 convergence
guard, 4 verification failure. Numbers are written with 17 significant
digits so identical runs give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import example as E
from . import expr as ex
from . import melnikov as mk
from . import separatrix as sp
from . import splitting as spl
from .phase import (CATALOG_NAMES, SystemDef, SystemError_, bracket_hook, catalog,
                    extend_periodic, load_system_file)

OK, CONFIG, SOLVER, GUARD, VERIFY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    system: str = "pendulum"
    system_file: str | None = None
    params: dict = field(default_factory=dict)
    h1: str | None = None
    out: str | None = None
    format: str = "csv"
    options: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# output


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON with sorted keys and 17-significant-digit floats."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + f"\n{pad}]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return json.dumps(str(obj))


def _emit(cfg: RunConfig, name: str, text: str) -> None:
    if cfg.out is None:
        _sys.stdout.write(text)
        return
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / name, "w", newline="\n") as fh:
        fh.write(text)


def _summary(obj) -> None:
    _sys.stdout.write(dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# parsing helpers


def _floats(text: str, what: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"malformed {what} {text!r}: expected comma-separated numbers") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} values, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{what} must be finite")
    return vals


def _params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"parameter {item!r} is not of the form name=value")
        k, v = item.split("=", 1)
        out[k.strip()] = _floats(v, f"parameter {k}", 1)[0]
    return out


def load_system(cfg: RunConfig) -> SystemDef:
    if cfg.system_file:
        sys = load_system_file(cfg.system_file)
        return sys.with_h1(cfg.h1) if cfg.h1 else sys
    if cfg.system not in CATALOG_NAMES:
        raise ConfigError(f"unknown system {cfg.system!r}; choose from {', '.join(CATALOG_NAMES)}")
    return catalog(cfg.system, cfg.params, cfg.h1)


def _tol(value, name: str, lo: float = 1e-14, hi: float = 1e-2) -> float:
    v = float(value)
    if not lo <= v <= hi:
        raise ConfigError(f"{name} must lie in [{lo:g}, {hi:g}]")
    return v


def _end(sys: SystemDef, point) -> sp.EndOrbit:
    """Fixed point if the vector field vanishes there, else a periodic orbit."""
    point = np.asarray(point, dtype=float)
    if np.linalg.norm(sys.field_function("H0")(0.0, point)) < 1e-10:
        return sp.EndOrbit.fixed_point(sys, point)
    return sp.EndOrbit.periodic(sys, dyn.find_periodic_orbit(sys, point))


def build_orbit(cfg: RunConfig, sys: SystemDef):
    """(system the integrals live on, connecting orbit with s = 0 at the base)."""
    o = cfg.options
    if sys.time_dependent:
        ext = extend_periodic(sys)
        if cfg.system in ("pendulum", "duffing") and not cfg.system_file and not o.get("numeric"):
            return ext, sp.analytic_separatrix(cfg.system, sys).lift(ext, 0.0)
        if not (o.get("source") and o.get("target")):
            raise ConfigError("--source and --target are needed for this system")
        src = _floats(o["source"], "source", sys.dim)
        tgt = _floats(o["target"], "target", sys.dim)
        orbit = sp.numeric_separatrix(sys, sp.EndOrbit.fixed_point(sys, src),
                                      sp.EndOrbit.fixed_point(sys, tgt), int(o.get("branch", 1)))
        return ext, orbit.lift(ext, 0.0)
    if cfg.system == "paper-example" and not cfg.system_file and not o.get("through"):
        return sys, E.heteroclinic(sys)
    if not (o.get("through") and o.get("source") and o.get("target")):
        raise ConfigError("--through, --source and --target are needed for this system")
    m = _floats(o["through"], "through", sys.dim)
    src = _end(sys, _floats(o["source"], "source", sys.dim))
    tgt = _end(sys, _floats(o["target"], "target", sys.dim))
    return sys, sp.orbit_through(sys, m, src, tgt)


def _default_A(cfg: RunConfig, sys: SystemDef, isys: SystemDef):
    text = cfg.options.get("A")
    if text:
        return isys.parse(text)
    return isys.parse(ex.to_source(sys.H0)) if sys.time_dependent else isys.H0


def _t0_grid(cfg: RunConfig, sys: SystemDef) -> tuple[np.ndarray, float]:
    n = int(cfg.options.get("samples", 128))
    if n < 1:
        raise ConfigError("--samples must be positive")
    if sys.time_dependent:
        period = float(sys.forcing_period)
    else:
        period = float(sys.circumferences[sys.index("t")]) if "t" in sys.coordinate_names else 1.0
    return np.linspace(0.0, period, n, endpoint=False), period


# ---------------------------------------------------------------------------
# commands


def cmd_orbit(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    o = cfg.options
    if not o.get("guess"):
        raise ConfigError("--guess is required")
    if sys.time_dependent:
        sys = extend_periodic(sys)  # guesses then include (t, eta)
    guess = _floats(o["guess"], "guess", sys.dim)
    period = float(o["period"]) if o.get("period") else None
    rec = dyn.find_periodic_orbit(sys, guess, period=period,
                                  tol=_tol(o.get("tol", 1e-12), "--tol"))
    out = rec.to_dict()
    out["pairing_error"] = rec.pairing_error
    out["unit_count"] = rec.unit_count
    _emit(cfg, "orbit.json", dumps(out) + "\n")
    return OK


def cmd_separatrix(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    isys, orbit = build_orbit(cfg, sys)
    n = int(cfg.options.get("points", 401))
    s = np.linspace(-orbit.S, orbit.S, n)
    _emit(cfg, "separatrix.csv", sp.separatrix_csv(orbit, s))
    report = {"kind": orbit.kind, "S": orbit.S, "rates": list(orbit.rates),
              "energy_residual": orbit.energy_residual()}
    frame_exprs = cfg.options.get("frame")
    if frame_exprs:
        fr = sp.conserved_frame(isys, frame_exprs.split(";"), orbit)
        report["frame"] = fr.report()
    if cfg.out is not None:
        _summary(report)
    return OK


def _samples(cfg: RunConfig, sys, isys, orbit, A, grid):
    mode = cfg.options.get("mode", "auto")
    s0 = float(cfg.options.get("s0", 0.0))
    qt = _tol(cfg.options.get("quad_tol", 1e-10), "--quad-tol")
    if mode == "prescribed":
        return [mk.melnikov_prescribed(isys, A, orbit, s0, float(t)) for t in grid]
    if mode in ("auto", "convergent"):
        m = mk.convergence_mode(isys, A, isys.H1, orbit)
        return [mk.melnikov_convergent(isys, A, orbit, s0, float(t), quad_tol=qt, mode=m)
                for t in grid]
    raise ConfigError(f"unknown mode {mode!r}: use auto, convergent or prescribed")


def _zeros(isys, orbit, A, samples, period, mode, s0):
    def evaluate(t):
        if mode == "prescribed":
            return mk.melnikov_prescribed(isys, A, orbit, s0, t).value
        return mk.melnikov_convergent(isys, A, orbit, s0, t).value
    try:
        return mk.find_zeros(samples, evaluator=evaluate, period=period)
    except mk.NoSignChangeError:
        return []


def cmd_melnikov(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    isys, orbit = build_orbit(cfg, sys)
    A = _default_A(cfg, sys, isys)
    grid, period = _t0_grid(cfg, sys)
    samples = _samples(cfg, sys, isys, orbit, A, grid)
    _emit(cfg, "melnikov.csv", mk.samples_csv(samples))
    v = np.array([s.value for s in samples])
    mode = cfg.options.get("mode", "auto")
    # grids too coarse for the zero search still get their samples written
    zeros = (None if len(samples) < mk.MIN_ZERO_SAMPLES else
             [z.t0 for z in _zeros(isys, orbit, A, samples, period, mode,
                                   float(cfg.options.get("s0", 0.0)))])
    summary = {"amplitude": float(np.max(np.abs(v))), "mean": float(np.mean(v)),
               "max_error": float(max(s.error for s in samples)),
               "mode": samples[0].mode, "zeros": zeros}
    if mode == "prescribed":
        summary["windows"] = [list(map(float, s.windows)) for s in samples[:1]]
        summary["diverging"] = any(s.diverging for s in samples)
    if cfg.out is not None:
        _summary(summary)
    return OK


def cmd_zeros(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    isys, orbit = build_orbit(cfg, sys)
    A = _default_A(cfg, sys, isys)
    grid, period = _t0_grid(cfg, sys)
    samples = _samples(cfg, sys, isys, orbit, A, grid)
    zeros = _zeros(isys, orbit, A, samples, period, cfg.options.get("mode", "auto"),
                   float(cfg.options.get("s0", 0.0)))
    _emit(cfg, "zeros.json", dumps([z.to_dict() for z in zeros]) + "\n")
    return OK


def cmd_split(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    o = cfg.options
    eps = _floats(o.get("eps", "1e-2,1e-3"), "eps")
    if len(eps) < 2:
        raise ConfigError("--eps needs at least two values")
    if any(not 0 < abs(e) <= 0.1 for e in eps):
        raise ConfigError("--eps values must satisfy 0 < |eps| <= 0.1")
    if not sys.time_dependent:
        raise ConfigError("split needs a periodically forced system")
    isys, orbit = build_orbit(cfg, sys)
    A = isys.parse(ex.to_source(sys.H0))
    T = float(sys.forcing_period)
    phases = (_floats(o["phases"], "phases") if o.get("phases")
              else [T / 4 + T * k / 5 for k in range(5)])
    base = orbit(0.0)[:2]
    src, tgt = orbit.source.point[:2], orbit.target.point[:2]
    if cfg.system == "pendulum" and not cfg.system_file:
        src, tgt = np.zeros(2), np.array([2.0 * math.pi, 0.0])

    def melnikov(t0):
        return mk.melnikov_convergent(isys, A, orbit, 0.0, t0).value

    amp = float(np.max(np.abs([melnikov(t) for t in np.linspace(0, T, 64, endpoint=False)])))
    rep = spl.first_order_check(sys, base, src, tgt, melnikov, amp, eps, phases)
    _emit(cfg, "split.json", dumps(rep.to_dict()) + "\n")
    if o.get("polylines") and cfg.out is not None:
        for side, fp_guess in (("unstable", src), ("stable", tgt)):
            smap = spl.SectionMap(sys, eps[0], phases[0])
            fp = spl.perturbed_fixed_point(smap, fp_guess)
            line = spl.manifold_polyline(smap, fp, side, float(o.get("arclen", 8.0)),
                                         branch=1.0 if (base - fp)[0] >= 0 else -1.0)
            _emit(cfg, f"{side}.csv", spl.polyline_csv(line))
    return OK


def cmd_potential(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    isys, orbit = build_orbit(cfg, sys)
    o = cfg.options
    m0 = _floats(o["m0"], "m0", isys.dim) if o.get("m0") else orbit(0.0)
    m = _floats(o["m"], "m", isys.dim) if o.get("m") else orbit(1.0)
    value = mk.melnikov_potential(isys, None, orbit, m0, m)
    _emit(cfg, "potential.json", dumps({"m0": list(m0), "m": list(m), "L": value}) + "\n")
    return OK


def cmd_integrals(cfg: RunConfig) -> int:
    sys = load_system(cfg)
    isys, orbit = build_orbit(cfg, sys)
    frame_exprs = cfg.options.get("frame")
    exprs = frame_exprs.split(";") if frame_exprs else [isys.H0, "eta"]
    fr = sp.conserved_frame(isys, exprs, orbit)
    recs = []
    for end in (orbit.target, orbit.source):
        if end.record is not None:
            recs.append(end.record)
        else:
            guess = np.asarray(end.point, dtype=float)
            recs.append(dyn.find_periodic_orbit(isys, guess))
    rep = mk.critical_integral_basis(isys, fr, recs[0], recs[1])
    _emit(cfg, "integrals.json", dumps(rep.to_dict()) + "\n")
    return OK


def cmd_example_paper(cfg: RunConfig) -> int:
    o = cfg.options
    rep = E.report(float(o.get("c", 0.5)), float(o.get("delta", 0.3)), float(o.get("eta", 0.01)))
    _emit(cfg, "example.json", dumps(rep) + "\n")
    return OK


def cmd_verify(cfg: RunConfig) -> int:
    from . import acceptance

    only = cfg.options.get("only")
    numbers = None
    if only:
        numbers = []
        for tok in only.split(","):
            tok = tok.strip()
            if tok in acceptance.GROUPS:
                numbers += list(acceptance.GROUPS[tok])
            elif tok.isdigit() and int(tok) in acceptance.CHECKS:
                numbers.append(int(tok))
            else:
                raise ConfigError(f"unknown check {tok!r}; use 1-10 or one of "
                                  f"{', '.join(acceptance.GROUPS)}")
    bracket_hook.flip = bool(cfg.options.get("flip_bracket"))
    try:
        results = acceptance.run(sorted(set(numbers)) if numbers else None,
                                 echo=lambda s: print(s, flush=True))
    finally:
        bracket_hook.flip = False
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"first failing check: {failed[0].number} {failed[0].name}", file=_sys.stderr)
        return VERIFY
    return OK


COMMANDS = {
    "orbit": (cmd_orbit, "find and classify a periodic orbit"),
    "separatrix": (cmd_separatrix, "connecting orbit samples (CSV)"),
    "melnikov": (cmd_melnikov, "Mel'nikov function on a t0 grid (CSV + JSON summary)"),
    "zeros": (cmd_zeros, "zeros of the Mel'nikov function (JSON)"),
    "split": (cmd_split, "direct manifold splitting against first-order theory"),
    "potential": (cmd_potential, "Mel'nikov potential between two points"),
    "integrals": (cmd_integrals, "count first integrals critical on both end orbits"),
    "verify": (cmd_verify, "run the acceptance checks"),
    "example-paper": (cmd_example_paper, "periods and counting for the bump example"),
}


def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="melform", description=__doc__.splitlines()[0])
    subs = top.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, helptext) in COMMANDS.items():
        p = subs.add_parser(name, help=helptext, description=helptext)
        g = p.add_argument_group("system")
        g.add_argument("--system", choices=CATALOG_NAMES, help="catalog system")
        g.add_argument("--system-file", help="system definition file (overrides --system)")
        g.add_argument("--param", action="append", metavar="NAME=VALUE",
                       help="catalog parameter, repeatable")
        g.add_argument("--h1", help="perturbation H1 expression")
        p.add_argument("--config", help="JSON file of option defaults (flags win)")
        p.add_argument("--out", help="output directory (default: standard output)")
        p.add_argument("--format", choices=("csv", "json"), help="preferred data format")
        if name == "orbit":
            p.add_argument("--guess", help="comma-separated initial point")
            p.add_argument("--period", help="fixed period instead of a section")
            p.add_argument("--tol", help="integration tolerance")
        if name in ("separatrix", "melnikov", "zeros", "split", "potential", "integrals"):
            p.add_argument("--source", help="source fixed point or periodic-orbit guess")
            p.add_argument("--target", help="target fixed point or periodic-orbit guess")
            p.add_argument("--through", help="point on the connecting orbit (autonomous)")
            p.add_argument("--branch", type=int, help="unstable branch sign (+1 or -1)")
            p.add_argument("--numeric", action="store_true", default=None,
                           help="numeric separatrix even when a closed form exists")
        if name in ("separatrix", "integrals"):
            p.add_argument("--frame", help="';'-separated conserved quantities")
        if name == "separatrix":
            p.add_argument("--points", type=int, help="number of samples")
        if name in ("melnikov", "zeros"):
            p.add_argument("--A", dest="A", help="first integral A (default H0)")
            p.add_argument("--samples", type=int, help="grid size (default 128)")
            p.add_argument("--mode", choices=("auto", "convergent", "prescribed"))
            p.add_argument("--s0", type=float, help="base point parameter on the orbit")
            p.add_argument("--quad-tol", dest="quad_tol", type=float, help="quadrature tolerance")
        if name == "split":
            p.add_argument("--eps", help="comma-separated eps values")
            p.add_argument("--phases", help="comma-separated section phases")
            p.add_argument("--polylines", action="store_true", default=None,
                           help="also write manifold polylines at the first eps and phase")
            p.add_argument("--arclen", type=float, help="polyline arc length")
        if name == "potential":
            p.add_argument("--m0", help="reference point")
            p.add_argument("--m", help="evaluation point")
        if name == "verify":
            p.add_argument("--only", help="check numbers or groups: "
                           "example, melnikov, splitting, numerics, potential")
            p.add_argument("--flip-bracket", dest="flip_bracket", action="store_true",
                           default=None, help="test hook: flip the sign of one bracket term")
        if name == "example-paper":
            p.add_argument("--c", type=float, help="bump height (default 0.5)")
            p.add_argument("--delta", type=float, help="bump radius squared (default 0.3)")
            p.add_argument("--eta", type=float, help="eta level for the periods (default 0.01)")
    return top


_COMMON = ("system", "system_file", "param", "h1", "out", "format", "config", "command")


def make_config(argv=None) -> RunConfig:
    args = vars(_parser().parse_args(argv))
    merged = {}
    if args.get("config"):
        try:
            with open(args["config"]) as fh:
                merged = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(merged, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(merged) - set(args)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for k, v in args.items():
        if v is not None:
            merged[k] = v
    params = merged.get("param") or []
    if isinstance(params, dict):
        params = [f"{k}={v}" for k, v in params.items()]
    return RunConfig(
        command=args["command"],
        system=merged.get("system") or ("paper-example" if args["command"] == "example-paper"
                                        else "pendulum"),
        system_file=merged.get("system_file"),
        params=_params(params),
        h1=merged.get("h1"),
        out=merged.get("out"),
        format=merged.get("format") or "csv",
        options={k: v for k, v in merged.items() if k not in _COMMON},
    )


def main(argv=None) -> int:
    try:
        cfg = make_config(argv)
        return COMMANDS[cfg.command][0](cfg)
    except SystemExit as exc:  # argparse: --help and usage errors
        return OK if exc.code in (0, None) else CONFIG
    except (ConfigError, SystemError_, ex.ExprError, OSError) as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return CONFIG
    except mk.GuardError as exc:
        print(f"guard: {exc}", file=_sys.stderr)
        return GUARD
    except (dyn.NewtonError, dyn.FlowError, dyn.NoReturnError, sp.NoConnectionError,
            sp.FrameError, mk.NoSignChangeError, ValueError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return SOLVER


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
