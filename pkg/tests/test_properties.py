"""Property-based checks (hypothesis) on the algebraic structure."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from melform import example as E
from melform import expr as ex
from melform import melnikov as mk
from melform.acceptance import random_expression
from melform.phase import catalog, poisson_bracket

SLOW = settings(max_examples=12, deadline=None,
                suppress_health_check=[HealthCheck.function_scoped_fixture])
coef = st.floats(-3.0, 3.0, allow_nan=False).filter(lambda x: abs(x) > 1e-3)

NAMES = ["x", "y", "z"]
leaf = st.one_of(st.sampled_from(NAMES),
                 st.floats(-5, 5, allow_nan=False).map(lambda v: repr(round(v, 6))))


def _combine(children):
    unary = st.tuples(st.sampled_from(["sin", "cos", "exp", "arctan", "tanh", "sech"]),
                      children).map(lambda a: f"{a[0]}({a[1]})")
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(
        lambda a: f"({a[0]} {a[1]} {a[2]})")
    power = st.tuples(children, st.integers(0, 3)).map(lambda a: f"({a[0]})^{a[1]}")
    neg = children.map(lambda c: f"-({c})")
    return st.one_of(unary, binary, power, neg)


sources = st.recursive(leaf, _combine, max_leaves=12)
points = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(sources, points)
def test_print_parse_round_trip(src, pt):
    e = ex.parse(src, NAMES)
    again = ex.parse(ex.to_source(e), NAMES)
    b = dict(zip(NAMES, pt))
    try:
        ref = ex.evaluate(e, b)
    except ex.DomainError:
        with pytest.raises(ex.DomainError):
            ex.evaluate(again, b)
        return
    val = ex.evaluate(again, b)
    assert val == ref or (math.isnan(val) and math.isnan(ref))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(-1, 1, allow_nan=False),
                                             min_size=4, max_size=4))
def test_bracket_antisymmetry(seed, m):
    pe = catalog("paper-example")
    rng = np.random.default_rng(seed)
    names = pe.coordinate_names
    f = pe.parse(random_expression(rng, names))
    g = pe.parse(random_expression(rng, names))
    fg, gf = poisson_bracket(pe, f, g, m), poisson_bracket(pe, g, f, m)
    assert abs(fg + gf) <= 1e-12 * (1.0 + abs(fg))
    assert poisson_bracket(pe, f, f, m) == 0.0 or abs(poisson_bracket(pe, f, f, m)) < 1e-12


@pytest.fixture(scope="module")
def critical_pendulum():
    return E.forced_pendulum(h1="(1 - cos(q))*cos(t)")


@SLOW
@given(coef, coef, st.floats(0.0, 2 * math.pi), st.floats(-2.0, 2.0))
def test_beta_is_linear_in_A(critical_pendulum, a, b, t0, s0):
    ext, orbit = critical_pendulum
    A1, A2 = "p^2/2 + cos(q)", "eta"
    combo = f"{a!r}*(p^2/2 + cos(q)) + {b!r}*eta"
    r1 = mk.melnikov_convergent(ext, A1, orbit, s0, t0)
    r2 = mk.melnikov_convergent(ext, A2, orbit, s0, t0)
    rc = mk.melnikov_convergent(ext, combo, orbit, s0, t0)
    tol = abs(a) * r1.error + abs(b) * r2.error + rc.error + 1e-12
    assert abs(rc.value - (a * r1.value + b * r2.value)) <= tol


@pytest.fixture(scope="module")
def bump_records(bump):
    sys, recs, _ = bump
    return sys, recs


@SLOW
@given(coef, coef)
def test_critical_coefficients_are_linear(bump_records, a, b):
    sys, recs = bump_records
    combo = f"{a!r}*({ex.to_source(sys.H0)}) + {b!r}*eta"
    for rec in recs:
        c_h, _ = mk.critical_fit(sys, sys.H0, rec)
        c_e, _ = mk.critical_fit(sys, "eta", rec)
        c_c, res = mk.critical_fit(sys, combo, rec)
        assert res < 1e-8
        assert c_c == pytest.approx(a * c_h + b * c_e, abs=1e-9 * (abs(a) + abs(b)))
