import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kacsphere import alip
from kacsphere.errors import PreconditionError, QuadratureError
from kacsphere.sphere import PsiMap

POWER_H = np.geomspace(1e-7, 1e-1, 8)


class TestMeasureLipschitz:
    def test_linear(self):
        assert alip.measure_lipschitz(lambda x: 3 * x, -1, 1) == pytest.approx(3.0)

    def test_kink_refinement(self):
        # the steep piece is narrower than the base grid spacing
        w = 1e-6
        fn = lambda x: np.clip(x / w, 0, 1)  # noqa: E731
        assert alip.measure_lipschitz(fn, -1, 1, kinks=(0.0, w)) == pytest.approx(1 / w, rel=1e-6)


class TestPower:
    @pytest.mark.parametrize("a", [-0.5, 0.5])
    def test_closed_form_error(self, a):
        h = 1e-2
        fam = alip.approx_power(a, h)
        expected = abs(a) * (1 - a) / (1 + a) * h ** (1 + a)
        assert fam.l1_error == pytest.approx(expected, rel=1e-8)
        assert fam.lip_constant == pytest.approx(abs(a) * h ** (a - 1), rel=0.01)

    def test_lipschitz_target(self):
        fams = alip.sweep(lambda h: alip.approx_power(1.0, h), POWER_H)
        fit = alip.fit_r(fams)
        assert fit.r == 0.0 and fit.L0 == pytest.approx(1.0)
        assert all(f.l1_error <= 1e-15 * f.parameter for f in fams)

    @pytest.mark.parametrize("a,r", [(-0.5, 3.0), (0.5, 1 / 3), (-0.25, 5 / 3), (0.25, 0.6)])
    def test_table_exponent(self, a, r):
        fit = alip.fit_r(alip.sweep(lambda h: alip.approx_power(a, h), POWER_H))
        assert fit.r == pytest.approx(r, rel=0.1)
        assert fit.contains(r) or abs(fit.r - r) < 1e-6

    def test_domain(self):
        with pytest.raises(PreconditionError):
            alip.approx_power(-1.0, 0.1)
        with pytest.raises(PreconditionError):
            alip.approx_power(0.5, 2.0)

    def test_normalisation_recorded(self):
        fam = alip.approx_power(-0.5, 0.1, R=2.0)
        assert fam.extra["normalization"] == pytest.approx(2 * 2**0.5 / 0.5)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-0.9, 0.9).filter(lambda a: abs(a) > 0.05), st.floats(1e-4, 0.5))
    def test_recorded_lip_matches_grid(self, a, h):
        fam = alip.approx_power(a, h)
        grid = np.linspace(-1, 1, 10_001)
        slope = np.max(np.abs(np.diff(fam.approximant(grid)) / np.diff(grid)))
        assert slope <= fam.lip_constant * 1.01
        assert fam.l1_error > 0


class TestStep:
    def test_error_and_lip(self):
        fam = alip.approx_step(0.1)
        assert fam.l1_error == pytest.approx(0.025, abs=1e-12)
        assert fam.lip_constant == pytest.approx(10.0, rel=1e-9)

    def test_unit_width(self):
        fam = alip.approx_step(1.0)
        assert fam.l1_error == pytest.approx(0.25, abs=1e-12)
        assert fam.lip_constant * fam.l1_error == pytest.approx(0.25, rel=0.05)

    @pytest.mark.parametrize("h", np.geomspace(1e-4, 1, 9))
    def test_product(self, h):
        fam = alip.approx_step(h)
        assert fam.l1_error == pytest.approx(h / 4, abs=1e-12)
        assert fam.lip_constant * fam.l1_error == pytest.approx(0.25, rel=0.05)

    def test_fit(self):
        fit = alip.fit_r(alip.sweep(alip.approx_step, np.geomspace(1e-4, 1, 9)))
        assert fit.r == pytest.approx(1.0, abs=0.05)
        assert fit.L0 == pytest.approx(0.25, rel=0.05)

    def test_domain(self):
        with pytest.raises(PreconditionError):
            alip.approx_step(1.5)


class TestMollify:
    def test_smooth_target_bounded(self):
        fams = alip.sweep(lambda d: alip.approx_mollify(alip.gaussian_target(), d), np.geomspace(1e-3, 0.3, 7))
        lips = [f.lip_constant for f in fams]
        assert max(lips) <= math.exp(-0.5) / math.sqrt(2 * math.pi) * 1.01
        fit = alip.fit_r(fams)
        assert fit.r <= 1.5 + 0.05

    def test_error_monotone(self):
        target = alip.weierstrass_target()
        errs = [alip.approx_mollify(target, d).l1_error for d in np.geomspace(1e-4, 0.1, 6)]
        assert np.all(np.diff(errs) > 0)

    def test_grid_matches_direct_quadrature(self):
        target = alip.weierstrass_target(terms=8)
        delta = 0.05
        fam = alip.approx_mollify(target, delta)
        t, w = np.polynomial.legendre.leggauss(200)
        for x0 in [-0.5, 0.1, 0.7]:
            direct = np.sum(w * alip._bump(t) * target(x0 - delta * t))
            assert fam.approximant(x0) == pytest.approx(direct, abs=1e-6)

    def test_recorded_lip(self):
        fam = alip.approx_mollify(alip.weierstrass_target(terms=10), 0.01)
        grid = np.linspace(-1, 1, 10_001)
        slope = np.max(np.abs(np.diff(fam.approximant(grid)) / np.diff(grid)))
        assert slope <= fam.lip_constant * 1.01

    def test_coarse_grid_rejected(self):
        with pytest.raises(QuadratureError):
            alip.approx_mollify(alip.gaussian_target(), 0.01, grid_step=0.005)

    def test_weierstrass_exponent_measured(self):
        # the analytic exponent is an upper bound; this records the measured class
        fit = alip.fit_r(alip.sweep(lambda d: alip.approx_mollify(alip.weierstrass_target(), d),
                                    np.geomspace(2e-5, 0.2, 8)))
        assert 0.8 < fit.r < 3 * 1.15


class TestFitR:
    def test_too_few(self):
        with pytest.raises(PreconditionError):
            alip.fit_r(alip.sweep(alip.approx_step, [0.1, 0.2, 0.3]))

    def test_too_narrow(self):
        with pytest.raises(PreconditionError):
            alip.fit_r(alip.sweep(alip.approx_step, np.linspace(0.2, 1.0, 6)))


class TestDistortion:
    def test_identity(self):
        res = alip.distortion_l1(alip.gaussian_test_function(1), None)
        assert res.measured == 0.0 and res.bound == 0.0 and res.ok

    @pytest.mark.parametrize("k", [1, 2])
    def test_gaussian_bound(self, k):
        psi = PsiMap.quantitative(1e4, 0.5, 0.5, k)
        res = alip.distortion_l1(alip.gaussian_test_function(k), psi)
        assert 0 < res.measured <= res.bound
        assert res.epsilon <= alip.quantitative_epsilon(k, 0.5, 1e4)

    @pytest.mark.parametrize("N", [10, 100, 1000, 10_000])
    @pytest.mark.parametrize("u", [-0.9, 0.0, 0.9])
    def test_gaussian_grid(self, N, u):
        for k in (1, 2):
            psi = PsiMap.quantitative(N, 0.5, u, k)
            res = alip.distortion_l1(alip.gaussian_test_function(k), psi)
            assert res.ok

    def test_comparison_bound_zero(self):
        assert alip.comparison_bound(1, 1.0, 1.0, 2.0, 0.0, 1.0) == 0.0

    def test_comparison_bound_domain(self):
        with pytest.raises(PreconditionError):
            alip.comparison_bound(1, 1.0, 1.0, 2.0, 1.0, 1.0)

    def test_indicator_envelope(self):
        g = alip.indicator_test_function()
        rate = alip.nonlipschitz_exponent(1.0, 1, math.inf)
        assert rate == pytest.approx(0.5)
        Ns = [1e2, 1e3, 1e4, 1e5, 1e6]
        res = [alip.distortion_l1(g, PsiMap.quantitative(N, 0.5, 0.5, 1)) for N in Ns]
        eps = np.array([r.epsilon for r in res])
        meas = np.array([r.measured for r in res])
        C = meas[0] / eps[0] ** rate
        assert np.all(meas <= 3 * C * eps**rate)
        assert np.all(np.diff(meas) < 0)

    def test_dimension_mismatch(self):
        with pytest.raises(PreconditionError):
            alip.distortion_l1(alip.gaussian_test_function(1), PsiMap.quantitative(100, 0.5, 0.0, 2))

    def test_unsupported_k(self):
        with pytest.raises(PreconditionError):
            alip.gaussian_test_function(3)

    def test_sphere_area(self):
        assert alip.sphere_area(1) == pytest.approx(2.0)
        assert alip.sphere_area(2) == pytest.approx(2 * math.pi)
        assert alip.sphere_area(3) == pytest.approx(4 * math.pi)
