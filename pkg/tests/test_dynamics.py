import json
import math

import numpy as np
import pytest
from scipy.linalg import expm

from melform import dynamics as dyn
from melform import example as E
from melform.acceptance import symplecticity
from melform.phase import catalog


class TestFlow:
    def test_energy_conservation(self, pendulum):
        for T in (10.0, -10.0):
            tr = dyn.flow(pendulum, "H0", [math.pi, 2.0], (0.0, T))
            e = pendulum.energy("H0")(tr.y.T)
            assert np.max(np.abs(e - 1.0)) < 1e-9

    def test_energy_drift_over_30(self):
        pe = catalog("paper-example")
        for T in (30.0, -30.0):
            tr = dyn.flow(pe, "H0", [0.2, 0.1, 0.3, 0.9], (0.0, T))
            assert tr.meta["energy_drift"] < 1e-9

    def test_fixed_point_stays(self, pendulum):
        tr = dyn.flow(pendulum, "H0", [0.0, 0.0], (0.0, 17.0))
        assert np.all(tr.y == 0.0)

    def test_times_increase_for_backward_flow(self, pendulum):
        tr = dyn.flow(pendulum, "H0", [1.0, 0.5], (0.0, -3.0), sample_dt=0.1)
        assert np.all(np.diff(tr.s) > 0) and tr.s[0] == -3.0

    def test_dense_output_against_fresh_integration(self, pendulum):
        # cubic Hermite between samples: error falls like spacing^4
        errs = []
        for dt in (0.05, 0.01):
            tr = dyn.flow(pendulum, "H0", [1.0, 0.5], (0.0, 5.0), sample_dt=dt)
            errs.append(max(np.max(np.abs(tr(s) - dyn.propagate(pendulum, "H0", [1.0, 0.5],
                                                                  0.0, s)))
                            for s in (0.123, 2.71, 4.999)))
        assert errs[1] < 1e-10 and errs[0] / errs[1] > 100

    def test_bump_separatrix_reaches_next_saddle(self):
        pe = catalog("paper-example")
        m = [0.0, 0.0, math.pi, math.sqrt(2.0)]
        # round-off grows like exp(sqrt(2) s) along the separatrix, so the
        # closest approach to the saddle comes near s = 12
        end = dyn.propagate(pe, "H0", m, 0.0, 12.0)
        assert math.hypot(end[2] - 2 * math.pi, end[3]) < 1e-6

    @pytest.mark.parametrize("tol", [1e-15, 1e-5])
    def test_tolerance_range(self, pendulum, tol):
        with pytest.raises(ValueError):
            dyn.flow(pendulum, "H0", [0.0, 1.0], (0.0, 1.0), tol=tol)

    def test_blow_up_is_reported(self):
        from melform.phase import CoordinatePair, make_system
        sys = make_system([CoordinatePair("q", "p")], "-q^4/4 + p^2/2")
        with pytest.raises(dyn.FlowError):
            dyn.flow(sys, "H0", [2.0, 5.0], (0.0, 10.0))

    def test_stormer_verlet_cross_check(self, pendulum):
        ref = dyn.propagate(pendulum, "H0", [1.0, 0.5], 0.0, 3.0)
        a = dyn.stormer_verlet(pendulum, [1.0, 0.5], (0.0, 3.0), 1e-2)
        b = dyn.stormer_verlet(pendulum, [1.0, 0.5], (0.0, 3.0), 5e-3)
        ea, eb = np.max(np.abs(a - ref)), np.max(np.abs(b - ref))
        assert eb < 1e-4 and 3.0 < ea / eb < 5.0  # second order


class TestVariational:
    def test_saddle_matrix_exponential(self, pendulum):
        _, M = dyn.variational_flow(pendulum, "H0", [0.0, 0.0], (0.0, 1.0))
        ref = np.array([[math.cosh(1), math.sinh(1)], [math.sinh(1), math.cosh(1)]])
        assert np.max(np.abs(M - ref)) < 1e-10

    def test_identity_at_zero_time(self, pendulum):
        _, M = dyn.variational_flow(pendulum, "H0", [0.3, 0.1], (0.0, 0.0))
        assert np.array_equal(M, np.eye(2))

    def test_symplectic_and_unit_determinant(self):
        pe = catalog("paper-example")
        _, M = dyn.variational_flow(pe, "H0", [0.1, 0.02, 1.0, 0.3], (0.0, 3.0))
        J = dyn.symplectic_matrix(2)
        assert abs(np.linalg.det(M) - 1.0) < 1e-8
        assert np.max(np.abs(M.T @ J @ M - J)) < 1e-7

    def test_against_finite_differences(self, pendulum):
        m, T, h = np.array([0.4, 0.9]), 2.0, 1e-6
        _, M = dyn.variational_flow(pendulum, 0.1, m, (0.3, 0.3 + T))
        cols = [(dyn.propagate(pendulum, 0.1, m + h * e, 0.3, 0.3 + T)
                 - dyn.propagate(pendulum, 0.1, m - h * e, 0.3, 0.3 + T)) / (2 * h)
                for e in np.eye(2)]
        assert np.max(np.abs(M - np.array(cols).T)) < 1e-6


class TestPeriodicOrbits:
    def test_bump_periods(self):
        pe = catalog("paper-example")
        a = dyn.find_periodic_orbit(pe, [0.0, 0.01, 0.0, 0.0])
        b = dyn.find_periodic_orbit(pe, [0.0, 0.01, 2 * math.pi, 0.0])
        assert a.period == pytest.approx(2.0 / 3.0, abs=1e-8) and a.residual < 1e-10
        assert b.period == pytest.approx(1.0, abs=1e-8) and b.residual < 1e-10
        assert a.classification == b.classification == "nondegenerate-hyperbolic"

    def test_extended_saddle_multipliers(self, forced):
        ext, _, _ = forced
        rec = E.pendulum_saddle(ext)
        lam = np.sort(np.abs(rec.multipliers))
        assert lam[-1] == pytest.approx(math.exp(2 * math.pi), rel=1e-6)
        assert lam[0] == pytest.approx(math.exp(-2 * math.pi), rel=1e-6)
        assert rec.unit_count == 2
        assert rec.classification == "nondegenerate-hyperbolic"
        # agrees with the closed-form monodromy of the linearisation
        ref = expm(2 * math.pi * np.array([[0, 1], [1, 0]]))
        assert np.max(np.abs(rec.monodromy[:2, :2] - ref) / np.abs(ref).max()) < 1e-9

    def test_pairing_and_symplecticity(self, bump):
        _, recs, _ = bump
        for rec in recs:
            assert rec.pairing_error < 1e-6
            assert symplecticity(rec) < 1e-7

    def test_idempotent(self):
        pe = catalog("paper-example")
        a = dyn.find_periodic_orbit(pe, [0.0, 0.01, 0.0, 0.0])
        b = dyn.find_periodic_orbit(pe, a.m0)
        assert np.max(np.abs(a.m0 - b.m0)) < 1e-12 and b.iterations == 0

    def test_elliptic_orbit_is_not_hyperbolic(self):
        pe = catalog("paper-example")
        rec = dyn.find_periodic_orbit(pe, [0.0, 0.0, math.pi, 0.0])
        assert rec.classification == "nondegenerate-nonhyperbolic"

    def test_newton_divergence(self):
        pe = catalog("paper-example")
        with pytest.raises(dyn.NewtonError):
            dyn.find_periodic_orbit(pe, [0.0, 0.0, 1.4, 0.6], max_iter=2)

    @pytest.mark.parametrize("lam,kind", [
        ([535.0, 1.0, 1.0, 1 / 535.0], "nondegenerate-hyperbolic"),
        ([1.0, 1.0, np.exp(0.3j), np.exp(-0.3j)], "nondegenerate-nonhyperbolic"),
        ([1.0, 1.0, 1.0, 1.0], "degenerate"),
        ([1.0 + 5e-7, 1.0, 1.0 - 5e-7, 1.0], "degenerate"),
    ])
    def test_classification(self, lam, kind):
        assert dyn.classify_multipliers(lam) == kind


class TestReturnAndStrobe:
    def test_return_times(self):
        pe = catalog("paper-example")
        assert dyn.return_time(pe, [0.0, 0.01, 0.0, 0.0], ("t", 0.0)) == \
            pytest.approx(2.0 / 3.0, abs=1e-10)
        rec = dyn.find_periodic_orbit(pe, [0.0, 0.01, 2 * math.pi, 0.0])
        assert dyn.return_time(pe, rec.m0, ("t", 0.0)) == pytest.approx(rec.period, abs=1e-10)

    def test_fixed_point_never_returns(self, pendulum):
        with pytest.raises(dyn.NoReturnError):
            dyn.return_time(pendulum, [0.0, 0.0], ("q", 0.0))

    def test_strobe_at_zero_eps(self, pendulum):
        assert np.all(dyn.stroboscopic_map(pendulum, [0.0, 0.0], 0.0, 0.0) == 0.0)
        m = np.array([1.0, 0.3])
        end = dyn.stroboscopic_map(pendulum, m, 0.4, 0.0)
        H = pendulum.energy("H0")
        assert abs(H(end) - H(m)) < 1e-9

    def test_strobe_inverse(self, pendulum):
        m = np.array([1.0, 0.3])
        fwd = dyn.stroboscopic_map(pendulum, m, 0.4, 0.05)
        back = dyn.stroboscopic_map(pendulum, fwd, 0.4, 0.05, inverse=True)
        assert np.max(np.abs(back - m)) < 1e-9

    def test_strobe_needs_forcing(self):
        with pytest.raises(ValueError):
            dyn.stroboscopic_map(catalog("paper-example"), [0, 0, 0, 0], 0.0, 0.1)


class TestExports:
    def test_trajectory_csv(self, pendulum):
        tr = dyn.flow(pendulum, "H0", [1.0, 0.5], (0.0, 1.0))
        text = dyn.trajectory_csv(pendulum, tr)
        lines = text.splitlines()
        assert lines[0] == "s,q,p" and len(lines) == len(tr.s) + 1
        assert text.endswith("\n") and "\r" not in text
        assert float(lines[1].split(",")[1]) == 1.0

    def test_monodromy_json(self, bump):
        _, recs, _ = bump
        rows = json.loads(dyn.monodromy_json(recs[0]))["rows"]
        assert np.array_equal(np.array(rows), recs[0].monodromy)
