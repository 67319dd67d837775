import math

import numpy as np
import pytest

from melform import dynamics as dyn
from melform import example as E
from melform import melnikov as mk
from melform import separatrix as sp
from melform import splitting as spl
from melform.phase import catalog, extend_periodic, wrap_difference

AMP = E.pendulum_amplitude()
BASE, SRC, TGT = [math.pi, 2.0], [0.0, 0.0], [2 * math.pi, 0.0]


def gap(pendulum, eps, t0):
    return spl.energy_gap(pendulum, eps, t0, BASE, SRC, TGT).gap


class TestFixedPoint:
    def test_unperturbed_is_the_saddle(self, pendulum):
        sm = spl.SectionMap(pendulum, 0.0)
        assert np.array_equal(spl.perturbed_fixed_point(sm, [0.0, 0.0]), [0.0, 0.0])
        z = spl.perturbed_fixed_point(sm, [0.01, -0.02])
        assert np.max(np.abs(z)) < 1e-10

    @pytest.mark.parametrize("t0", [0.0, 1.3])
    def test_perturbed_stays_close(self, pendulum, t0):
        eps = 1e-3
        sm = spl.SectionMap(pendulum, eps, t0)
        z = spl.perturbed_fixed_point(sm, [0.0, 0.0])
        assert 0 < np.max(np.abs(z)) < 10 * eps
        assert np.max(np.abs(sm.advance(z, 1)[0] - z)) < 1e-10
        # linear response of the saddle to p*cos(t): q'' = q - eps*sin(t)
        assert z == pytest.approx([eps * math.sin(t0) / 2, -eps * math.cos(t0) / 2], abs=1e-6)

    def test_newton_failure_is_reported(self, pendulum):
        sm = spl.SectionMap(pendulum, 1e-2)
        with pytest.raises(dyn.NewtonError):
            spl.perturbed_fixed_point(sm, [1.2, 0.9], max_iter=1)

    def test_section_map_inverse(self, pendulum):
        sm = spl.SectionMap(pendulum, 0.05, 0.4)
        z = np.array([[0.3, 0.2], [1.0, -0.4]])
        assert np.max(np.abs(sm.advance(sm.advance(z, 1), -1) - z)) < 1e-9

    def test_autonomous_section_map_matches_return(self):
        pe = catalog("paper-example")
        rec = dyn.find_periodic_orbit(pe, [0.0, 0.01, 0.0, 0.0])
        sm = spl.SectionMap(pe, 0.0, energy=float(pe.energy("H0")(rec.m0)))
        z = rec.m0[sm.free]
        assert np.max(np.abs(sm.advance(z, 1)[0] - z)) < 1e-9
        assert sm.lift(z)[0, sm.ke] == pytest.approx(rec.m0[1], abs=1e-12)

    def test_section_map_needs_a_clock(self):
        from melform.phase import CoordinatePair, make_system
        planar = make_system([CoordinatePair("q", "p")], "p^2/2 + cos(q)")
        with pytest.raises(ValueError):
            spl.SectionMap(planar, 0.0)


@pytest.fixture(scope="module")
def lines(pendulum):
    sm = spl.SectionMap(pendulum, 0.0)
    un = spl.manifold_polyline(sm, np.zeros(2), "unstable", 6.0)
    st = spl.manifold_polyline(sm, np.array([2 * math.pi, 0.0]), "stable", 6.0, branch=-1.0)
    return un, st


class TestManifolds:
    def test_unperturbed_branches_lie_on_the_separatrix(self, lines, pendulum):
        H = pendulum.energy("H0")
        for line in lines:
            assert np.max(np.abs(H(line.points.T) - 1.0)) < 1e-8
            assert line.arclen[-1] >= 6.0 and not line.truncated

    def test_distance_to_closed_form(self, lines, pendulum):
        # the upper separatrix is the graph p = 2 sin(q/2), q in (0, 2 pi)
        for line in lines:
            q, p = np.mod(line.points[:, 0], 2 * math.pi), line.points[:, 1]
            assert np.all(p > -1e-9)
            assert np.max(np.abs(p - 2 * np.sin(q / 2))) < 1e-8

    def test_refinement_limits(self, lines):
        un, _ = lines
        seg = np.linalg.norm(np.diff(un.points, axis=0), axis=1)
        assert np.max(seg[:-1]) <= 0.05 + 1e-12

    def test_unperturbed_branches_coincide(self, pendulum):
        g = spl.energy_gap(pendulum, 0.0, 0.7, BASE, SRC, TGT)
        assert abs(g.gap) < 1e-9
        assert np.max(np.abs(g.stable.point - g.unstable.point)) < 1e-6

    def test_bad_arguments(self, pendulum):
        sm = spl.SectionMap(pendulum, 0.0)
        with pytest.raises(ValueError):
            spl.manifold_polyline(sm, [0.0, 0.0], "sideways", 1.0)
        with pytest.raises(ValueError):
            spl.manifold_polyline(sm, [0.0, 0.0], "unstable", 1.0, delta0=1e-2)

    def test_csv(self, lines):
        text = spl.polyline_csv(lines[0])
        rows = text.splitlines()
        assert rows[0] == "arclen,q,p" and len(rows) == len(lines[0].points) + 1
        assert rows[1].startswith("0,")


class TestFirstOrder:
    def test_gap_against_melnikov_at_the_peak(self, pendulum):
        eps = 1e-3
        g = gap(pendulum, eps, math.pi / 2)
        assert spl.SIGN * g / eps == pytest.approx(AMP, rel=0.05)

    def test_gap_sign_flips_across_a_zero(self, pendulum):
        eps = 1e-3
        lo, hi = gap(pendulum, eps, math.pi - 0.3), gap(pendulum, eps, math.pi + 0.3)
        assert lo * hi < 0
        assert spl.SIGN * lo > 0

    def test_gap_vanishes_to_first_order_at_melnikov_zeros(self, pendulum):
        eps = 1e-3
        for t0 in (0.0, math.pi):
            assert abs(gap(pendulum, eps, t0)) / eps < 0.02 * AMP

    def test_linear_in_eps(self, pendulum):
        g = [gap(pendulum, e, math.pi / 2) for e in (5e-4, 1e-3, 2e-3)]
        slope = np.polyfit([5e-4, 1e-3, 2e-3], g, 1)[0]
        assert spl.SIGN * slope == pytest.approx(AMP, rel=0.01)

    def test_sign_agreement_away_from_zeros(self, pendulum):
        eps = 1e-3
        phases = [t for t in np.linspace(0.1, 2 * math.pi, 12, endpoint=False)
                  if abs(math.sin(t)) > 0.2]
        agree = [np.sign(spl.SIGN * gap(pendulum, eps, t)) == np.sign(math.sin(t))
                 for t in phases]
        assert len(phases) >= 8 and np.mean(agree) >= 0.9

    def test_loglog_slope(self, pendulum):
        eps = np.array([1e-3, 3e-3, 1e-2])
        worst = [max(abs(gap(pendulum, e, t)) for t in (1.0, 2.2)) for e in eps]
        slope = np.polyfit(np.log(eps), np.log(worst), 1)[0]
        assert 0.8 <= slope <= 1.2

    def test_crossing_near_predicted_zero(self, pendulum):
        from scipy.optimize import brentq
        zeros = mk.find_zeros([mk.MelnikovSample(AMP * math.sin(t), 0.0, "closed form", "H0",
                                                 t0=t)
                               for t in np.linspace(0, 2 * math.pi, 32, endpoint=False)])
        t_star = zeros[1].t0
        shifts = {}
        for eps in (1e-2, 1e-3):
            root = brentq(lambda t: gap(pendulum, eps, t), t_star - 0.3, t_star + 0.3,
                          xtol=1e-8)
            shifts[eps] = abs(root - t_star)
        assert shifts[1e-3] < 0.05
        C = [shifts[e] / e for e in shifts]
        assert max(C) < 5.0 and (min(C) < 1e-3 or max(C) / min(C) < 3.0)

    def test_polyline_energy_drift_is_first_order(self, pendulum):
        drift = {}
        for eps in (1e-2, 1e-3):
            sm = spl.SectionMap(pendulum, eps)
            fp = spl.perturbed_fixed_point(sm, [0.0, 0.0])
            line = spl.manifold_polyline(sm, fp, "unstable", 4.0)
            V = line.points[::10]
            H = pendulum.energy("H0")
            drift[eps] = float(np.max(np.abs(H(sm.advance(V, 1).T) - H(V.T))))
        assert drift[1e-2] < 0.1
        assert 5.0 < drift[1e-2] / drift[1e-3] < 20.0

    def test_duffing(self):
        duf = catalog("duffing")
        ext = extend_periodic(duf)
        orbit = sp.analytic_separatrix("duffing", duf).lift(ext, 0.0)
        A = ext.parse("p^2/2 - q^2/2 + q^4/4")
        eps, t0 = 1e-3, 1.0
        g = spl.energy_gap(duf, eps, t0, [math.sqrt(2), 0.0], [0.0, 0.0], [0.0, 0.0]).gap
        M = mk.melnikov_convergent(ext, A, orbit, 0.0, t0).value
        amp = math.sqrt(2) * math.pi / math.cosh(math.pi / 2)
        assert abs(spl.SIGN * g / eps - M) < 0.05 * amp

    def test_report(self):
        pend = catalog("pendulum")
        rep = spl.first_order_check(pend, BASE, SRC, TGT, lambda t: AMP * math.sin(t), AMP,
                                    (1e-2, 1e-3), [1.0, 2.5])
        assert rep.deviations.shape == (2, 2)
        assert 5.0 <= rep.residual_ratio <= 20.0
        assert rep.fitted_order == pytest.approx(1.0, abs=0.15)
        assert '"residual_ratio"' in rep.to_json()


def test_gap_derivative_needs_a_clock(pendulum):
    with pytest.raises(ValueError):
        spl.gap_derivative(pendulum, "p", BASE, SRC, TGT)
