import math

import numpy as np
import pytest

from melform import expr as ex
from melform.acceptance import derivative_errors, random_expression

QP = ["q", "p"]


def ev(src, names=(), **b):
    return ex.evaluate(ex.parse(src, list(names)), b)


class TestParse:
    def test_value_at_origin(self):
        assert ev("p^2/2 + cos(q)", QP, q=0.0, p=0.0) == 1.0

    def test_unbalanced_paren_reports_end_offset(self):
        # the source is 13 bytes long; the missing ')' is detected at its end
        with pytest.raises(ex.ExprSyntaxError) as info:
            ex.parse("p^2/2 + cos(q", QP)
        assert info.value.offset == 13
        assert "offset 13" in str(info.value)

    def test_non_ascii_is_rejected_with_offset(self):
        with pytest.raises(ex.ExprSyntaxError) as info:
            ex.parse("q + é", QP)
        assert info.value.offset == 4

    def test_variable_exponent_rejected(self):
        with pytest.raises(ex.ExprSyntaxError):
            ex.parse("q^p", QP)

    def test_undeclared_identifier_is_named(self):
        with pytest.raises(ex.UndeclaredIdentifierError) as info:
            ex.parse("eta*(1+G) + F", ["eta"])
        assert info.value.name == "G"

    @pytest.mark.parametrize("src", ["", "   ", "1 +", "(q", "q p", "2 ^ ^ 3", "sin()"])
    def test_syntax_errors(self, src):
        with pytest.raises(ex.ExprSyntaxError):
            ex.parse(src, QP)

    def test_function_without_parentheses(self):
        with pytest.raises(ex.ExprError):
            ex.parse("sin q", QP)

    def test_duplicate_declarations_rejected(self):
        with pytest.raises(ex.ExprError):
            ex.parse("q", ["q", "q"])

    @pytest.mark.parametrize("src,value", [
        ("2^3^2", 512.0),
        ("-2^2", -4.0),
        ("2*3+4", 10.0),
        ("2+3*4", 14.0),
        ("8/4/2", 1.0),
        ("1-2-3", -4.0),
        ("-(1+2)*3", -9.0),
        ("2^-1", 0.5),
    ])
    def test_precedence(self, src, value):
        assert ev(src) == value

    @pytest.mark.parametrize("fn,x,ref", [
        ("sin", 0.3, math.sin(0.3)), ("cos", 0.3, math.cos(0.3)), ("tan", 0.3, math.tan(0.3)),
        ("exp", 0.3, math.exp(0.3)), ("ln", 0.3, math.log(0.3)), ("sqrt", 0.3, math.sqrt(0.3)),
        ("sinh", 0.3, math.sinh(0.3)), ("cosh", 0.3, math.cosh(0.3)),
        ("tanh", 0.3, math.tanh(0.3)), ("sech", 0.3, 1 / math.cosh(0.3)),
        ("arctan", 0.3, math.atan(0.3)),
    ])
    def test_functions(self, fn, x, ref):
        assert ev(f"{fn}(x)", ["x"], x=x) == pytest.approx(ref, rel=1e-15)

    def test_pi_constant(self):
        assert ev("2*pi") == 2 * math.pi


class TestEvaluate:
    def test_hand_value(self):
        assert ev("p^2/2 + cos(q)", QP, q=0.0, p=2.0) == 3.0

    def test_sech_at_zero(self):
        assert ev("sech(x)", ["x"], x=0.0) == 1.0

    def test_sech_large_argument_is_finite(self):
        assert ev("sech(x)", ["x"], x=800.0) == 0.0

    def test_division_by_zero(self):
        with pytest.raises(ex.DomainError):
            ev("x/y", ["x", "y"], x=1.0, y=0.0)

    @pytest.mark.parametrize("src", ["ln(x)", "sqrt(x)", "x^0.5"])
    def test_domain_errors(self, src):
        with pytest.raises(ex.DomainError):
            ev(src, ["x"], x=-1.0)

    def test_missing_binding(self):
        with pytest.raises(ex.MissingBindingError):
            ev("x + y", ["x", "y"], x=1.0)


class TestDifferentiate:
    H = ex.parse("p^2/2 + cos(q)", QP)

    def test_dq(self):
        d = ex.differentiate(self.H, "q")
        assert ex.to_source(d) == "-sin(q)"

    def test_dp(self):
        d = ex.differentiate(self.H, "p")
        for p in (-1.5, 0.0, 2.0):
            assert ex.evaluate(d, {"q": 0.7, "p": p}) == pytest.approx(p, abs=1e-15)

    def test_xi_example(self):
        e = ex.parse("xi^2 + cos(x)", ["x", "xi"])
        assert ex.evaluate(ex.differentiate(e, "x"), {"x": 0.0, "xi": 0.4}) == 0.0

    def test_constant_folding(self):
        e = ex.parse("3*x + 0*y + 1*z", ["x", "y", "z"])
        d = ex.differentiate(e, "y")
        assert isinstance(d, ex.Const) and d.value == 0.0
        dz = ex.differentiate(e, "z")
        assert isinstance(dz, ex.Const) and dz.value == 1.0

    @pytest.mark.parametrize("bad", ["", "2x", "sin", "q p"])
    def test_invalid_variable(self, bad):
        with pytest.raises(ex.ExprError):
            ex.differentiate(self.H, bad)

    def test_absent_variable_gives_zero(self):
        assert ex.differentiate(self.H, "r") == ex.ZERO

    @pytest.mark.parametrize("src", [
        "tan(x)", "ln(x)", "sqrt(x)", "sinh(x)", "cosh(x)", "tanh(x)", "sech(x)", "arctan(x)",
        "x^2.5", "x^-3", "x/(1+x^2)", "exp(-x)*cos(3*x)", "sech(x)^2*tanh(x)",
    ])
    def test_each_primitive_matches_finite_differences(self, src):
        e = ex.parse(src, ["x"])
        d = ex.differentiate(e, "x")
        h = 1e-6
        for x in (0.4, 1.1, 2.3):
            fd = (ex.evaluate(e, {"x": x + h}) - ex.evaluate(e, {"x": x - h})) / (2 * h)
            exact = ex.evaluate(d, {"x": x})
            assert abs(exact - fd) / (1 + abs(exact)) < 1e-6

    def test_random_trees_match_finite_differences(self):
        assert np.max(derivative_errors(count=100, seed=11)) < 1e-6


class TestPrintRoundTrip:
    def test_random_expressions_reparse_bitwise(self, rng):
        names = ["x", "y", "z"]
        for _ in range(50):
            e = ex.parse(random_expression(rng, names), names)
            e2 = ex.parse(ex.to_source(e), names)
            for _ in range(20):
                b = dict(zip(names, rng.uniform(-1, 1, 3)))
                assert ex.evaluate(e2, b) == ex.evaluate(e, b)

    def test_negative_constants_and_powers(self):
        e = ex.parse("(-2)^2 - -x^2 + 1e-20*x", ["x"])
        e2 = ex.parse(ex.to_source(e), ["x"])
        assert ex.evaluate(e2, {"x": 0.3}) == ex.evaluate(e, {"x": 0.3})


class TestSubstituteAndCompile:
    def test_substitute_folds_parameters(self):
        e = ex.parse("omega*t + x", ["omega", "t", "x"])
        s = ex.substitute(e, {"omega": 2.0})
        assert ex.free_names(s) == frozenset({"t", "x"})
        assert ex.evaluate(s, {"t": 1.5, "x": 1.0}) == 4.0

    def test_compile_numpy_matches_scalar(self, rng):
        names = ["x", "y", "z"]
        for _ in range(20):
            exprs = [ex.parse(random_expression(rng, names), names) for _ in range(3)]
            fn = ex.compile_numpy(exprs, names)
            X = rng.uniform(-1, 1, (3, 7))
            out = np.asarray(fn(*X))
            for k, e in enumerate(exprs):
                ref = [ex.evaluate(e, dict(zip(names, X[:, j]))) for j in range(7)]
                assert np.allclose(out[k] * np.ones(7), ref, rtol=1e-13, atol=1e-14)

    def test_compile_shares_repeated_subtrees(self):
        e = ex.parse("sin(x*y)^2 + cos(sin(x*y))", ["x", "y"])
        fn = ex.compile_numpy(e, ["x", "y"])
        assert float(fn(0.3, 0.7)) == pytest.approx(ex.evaluate(e, {"x": 0.3, "y": 0.7}),
                                                    rel=1e-15)


class TestFlatTransition:
    def test_flat_is_smooth_at_the_origin(self):
        e = ex.parse("flat(x)", ["x"])
        d = e
        for _ in range(3):
            d = ex.differentiate(d, "x")
            assert ex.evaluate(d, {"x": 0.0}) == 0.0
            assert abs(ex.evaluate(d, {"x": 1e-3})) < 1e-12

    def test_flat_values(self):
        e = ex.parse("flat(x)", ["x"])
        assert ex.evaluate(e, {"x": -1.0}) == 0.0
        assert ex.evaluate(e, {"x": 2.0}) == pytest.approx(math.exp(-0.5))
