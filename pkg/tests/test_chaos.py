import math

import numpy as np
import pytest
from scipy import integrate

from kacsphere import chaos, rates
from kacsphere.densities import STANDARD_GAUSSIAN, StudentT, make_density, rel_entropy_gaussian, rel_fisher_gaussian
from kacsphere.errors import PreconditionError, UnsupportedError
from kacsphere.estimates import EstimateWithError
from kacsphere.fitting import fit_loglog, spearman_trend
from kacsphere.rescaled import ConditionedState, RescaledLaw, SphericalDensityKernel, sphere_marginal1_density

from test_rescaled import _s3_average

H_GAUSS = 0.2231435513142097
I_GAUSS = 0.5625


def law(spec, N):
    return RescaledLaw(make_density(spec), N)


class TestWasserstein:
    def test_gaussian_n10(self):
        est = chaos.w2_coupling_estimate(law("gamma", 10), 1_000_000, 1)
        exact = chaos.w2_gaussian_closed_form(10)
        assert exact == pytest.approx(0.04930, abs=5e-6)
        assert est.within(exact)

    def test_gaussian_asymptotics(self):
        est = chaos.w2_coupling_estimate(law("gamma", 1024), 200_000, 2)
        assert 1024 * est.value == pytest.approx(0.5, rel=0.1)

    def test_student3_slower(self):
        Ns = [8, 32, 128, 512]
        t3 = [chaos.w2_coupling_estimate(law({"name": "student_t", "params": {"nu": 3}}, N), 200_000, 3) for N in Ns]
        fit = fit_loglog(Ns, [e.value for e in t3], [e.error for e in t3])
        assert fit.slope > -1 + 0.1

    def test_needs_unit_energy(self):
        base = make_density({"name": "gaussian", "params": {"mu": 0.0, "sigma": 2.0}})
        with pytest.raises(PreconditionError):
            chaos.w2_coupling_estimate(RescaledLaw(base, 4), 10, 0)

    def test_wr_self_consistency(self):
        a = chaos.wr_coupling_estimate(law("gamma", 16), 3, 100_000, 4)
        b = chaos.wr_coupling_estimate(law("gamma", 16), 3, 1_000_000, 5)
        assert a.value > 0
        assert abs(a.value - b.value) <= 3 * math.hypot(a.error, b.error)

    @pytest.mark.parametrize("spec", ["gamma", "mixture"])
    def test_wr_reduces_to_w2(self, spec):
        a = chaos.wr_coupling_estimate(law(spec, 12), 2, 200_000, 6)
        b = chaos.w2_coupling_estimate(law(spec, 12), 200_000, 7)
        assert abs(a.value - b.value) <= 3 * math.hypot(a.error, b.error)

    def test_wr_moment_guard(self):
        with pytest.raises(PreconditionError):
            chaos.wr_coupling_estimate(law({"name": "student_t", "params": {"nu": 3}}, 8), 3, 10, 0)

    def test_wr_student5_bound_shape(self):
        Ns = [8, 16, 32, 64, 128, 256]
        est = [chaos.wr_coupling_estimate(law({"name": "student_t", "params": {"nu": 5}}, N), 3, 50_000, 8)
               for N in Ns]
        shape = rates.wr_prediction(5, 3).shape(np.array(Ns))
        C = est[0].value / shape[0]
        assert all(e.value - 3 * e.error <= C * s for e, s in zip(est, shape))

    def test_quantile_diagnostic_below_coupling(self):
        lw = law("mixture", 16)
        q = chaos.w2_marginal_quantile(lw, 200_000, 9)
        c = chaos.w2_coupling_estimate(lw, 200_000, 9)
        assert 0 <= q.value < c.value
        assert q.method == "quantile-coupling"


class TestL1:
    def test_gaussian_matches_closed_form(self):
        est = chaos.l1_marginal_distance(law("gamma", 16), 10_000, 16, 1)
        exact = chaos.l1_sphere_marginal_vs_gamma(16)
        direct, _ = integrate.quad(lambda z: abs(sphere_marginal1_density(16, z) - STANDARD_GAUSSIAN.pdf(z)),
                                   -4, 4, points=[-1, 1], limit=200)
        direct += 2 * (1 - STANDARD_GAUSSIAN.cdf(4))
        assert exact.value == pytest.approx(direct, abs=1e-8)
        assert est.within(exact.value, atol=1e-6)

    def test_gaussian_decreasing(self):
        vals = [chaos.l1_sphere_marginal_vs_gamma(N).value for N in [4, 8, 16, 32, 64]]
        assert np.all(np.diff(vals) < 0)

    @pytest.mark.parametrize("spec", ["mixture", "uniform", {"name": "student_t", "params": {"nu": 5}}], ids=str)
    def test_range(self, spec):
        est = chaos.l1_marginal_distance(law(spec, 8), 5_000, 16, 2)
        assert 0 <= est.value <= 2


class TestEntropy:
    @pytest.mark.parametrize("N", [4, 32])
    def test_gaussian_null(self, N):
        k = SphericalDensityKernel(STANDARD_GAUSSIAN, N, nodes=64)
        d = chaos.entropy_decomposition(k, 5000, 1)
        assert d.per_particle.within(0.0, atol=1e-10)
        assert d.gap.within(0.0, atol=1e-10)

    def test_upper_bound(self, gaussian):
        est = chaos.entropy_per_particle(SphericalDensityKernel(gaussian, 64, nodes=64), 20_000, 2)
        assert -3 * est.error <= est.value <= H_GAUSS + 3 * est.error

    def test_identity_same_sample(self, gaussian):
        d = chaos.entropy_decomposition(SphericalDensityKernel(gaussian, 8), 20_000, 3)
        assert d.per_particle.value + d.gap.value == pytest.approx(d.plugin_entropy.value, abs=1e-12)
        assert d.gap.value >= -3 * d.gap.error
        assert d.plugin_entropy.within(H_GAUSS)

    def test_mixture_trend(self, mixture):
        Ns = [4, 8, 16, 32, 64, 128]
        per, gap = [], []
        for N in Ns:
            d = chaos.entropy_decomposition(SphericalDensityKernel(mixture, N, nodes=64), 20_000, 4)
            per.append(d.per_particle.value)
            gap.append(d.gap.value)
        assert spearman_trend(Ns, per) > 0.9
        assert spearman_trend(Ns, gap) < -0.9


class TestFisher:
    def test_gaussian_null(self):
        est = chaos.fisher_per_particle(SphericalDensityKernel(STANDARD_GAUSSIAN, 8), 2000, 1)
        assert est.within(0.0, atol=1e-12)

    def test_bound_n16(self, gaussian):
        est = chaos.fisher_per_particle(SphericalDensityKernel(gaussian, 16), 20_000, 2)
        assert est.value <= (1 - 1 / 16) * I_GAUSS + 3 * est.error
        assert est.samples == 20_000 and math.isfinite(est.error)

    def test_n2_gaussian_null(self):
        assert chaos.fisher_n2_exact(STANDARD_GAUSSIAN).value == pytest.approx(0.0, abs=1e-10)

    def test_n2_bound(self, gaussian):
        est = chaos.fisher_n2_exact(gaussian)
        assert est.value + est.quad_error <= 0.5 * I_GAUSS
        assert est.extra["fisher_total"] == pytest.approx(2 * est.value)

    def test_n2_matches_monte_carlo(self, mixture):
        exact = chaos.fisher_n2_exact(mixture)
        mc = chaos.fisher_per_particle(SphericalDensityKernel(mixture, 2), 100_000, 3)
        assert mc.within(exact.value, atol=exact.quad_error)

    def test_identity_check(self, gaussian):
        chk = chaos.fisher_main_identity_check(gaussian, 8, 20_000, 4, nodes=64)
        assert chk.consistent()

    def test_identity_raw_ratio(self, mixture):
        chk = chaos.fisher_main_identity_check(mixture, 4, 50_000, 5, nodes=64)
        ratio = chk.discrepancy.extra["raw_ratio"]
        assert chk.consistent()
        assert ratio == pytest.approx(2.0, rel=0.05)

    def test_identity_gaussian(self):
        chk = chaos.fisher_main_identity_check(STANDARD_GAUSSIAN, 5, 2000, 6)
        assert chk.lhs.within(0.0, atol=1e-12) and chk.rhs.within(0.0, atol=1e-12)

    def test_unsupported(self):
        with pytest.raises(UnsupportedError):
            chaos.fisher_per_particle(SphericalDensityKernel(make_density("uniform"), 4), 10, 0)
        with pytest.raises(UnsupportedError):
            chaos.fisher_n2_exact(make_density("uniform"))


class TestTail:
    def test_gaussian(self):
        chk = chaos.tail_probability_check(STANDARD_GAUSSIAN, 256, 1, 0.25, 100_000, 1)
        assert chk.ok and chk.bound == pytest.approx(3.0) and chk.delta_bar == 2.0

    def test_student5(self):
        chk = chaos.tail_probability_check(StudentT(5), 512, 2, 0.2, 100_000, 2)
        assert chk.ok and chk.delta_bar == 2.0

    def test_small_q(self):
        chk = chaos.tail_probability_check(STANDARD_GAUSSIAN, 64, 1, 1e-6, 100_000, 3)
        assert chk.bound >= 16 * 3 * 64**-1.0 * (1 - 1e-4)
        assert chk.ok

    def test_precondition(self):
        with pytest.raises(PreconditionError):
            chaos.tail_probability_check(STANDARD_GAUSSIAN, 3, 2, 0.5, 10, 0)


class TestConditioned:
    def test_gaussian_null(self):
        est = chaos.conditioned_entropy_per_particle(ConditionedState(STANDARD_GAUSSIAN, 16), 5000, 1)
        assert est.within(0.0)

    def test_quadrature_oracle(self, gaussian):
        est = chaos.conditioned_entropy_per_particle(ConditionedState(gaussian, 4), 200_000, 2)

        def F(w):
            return np.exp(gaussian.log_pdf(w).sum(axis=1))

        Z = _s3_average(F)
        oracle = _s3_average(lambda w: F(w) / Z * np.log(F(w) / Z)) / 4
        assert est.value == pytest.approx(oracle, abs=1e-3)

    def test_mixture_trend(self, mixture):
        H = rel_entropy_gaussian(mixture).value
        Ns = [4, 8, 16, 32]
        dev = [abs(chaos.conditioned_entropy_per_particle(ConditionedState(mixture, N), 50_000, 3).value - H)
               for N in Ns]
        assert spearman_trend(Ns, dev) < -0.9


class TestMoments:
    def test_uniform_sphere(self):
        est = chaos.rescaled_coordinate_moment(law("gamma", 8), 4, 200_000, 1)
        assert est.within(2.4)

    def test_inner_batching_unbiased(self):
        a = chaos.rescaled_coordinate_moment(law("gamma", 8), 4, 200_000, 2, inner=100)
        assert a.within(2.4) and a.samples == 200_000

    def test_inner_divides(self):
        with pytest.raises(PreconditionError):
            chaos.rescaled_coordinate_moment(law("gamma", 8), 4, 1000, 0, inner=7)

    def test_q_deviation(self):
        assert chaos.q_deviation(law("mixture", 64), 10_000, 0).value < 0.2


class TestReport:
    def test_violations_and_records(self):
        ests = [EstimateWithError(0.5, 0.01, 100, 1, "mc"), EstimateWithError(0.1, 0.01, 100, 1, "mc")]
        rep = chaos.ChaosReport("fisher", "gaussian", [4, 8], ests, bound=[0.4, 0.4])
        assert rep.violations == [True, False]
        rows = rep.to_records("s")
        assert rows[0]["violation"] and rows[1]["N"] == 8 and rows[1]["stderr"] == pytest.approx(0.01)

    def test_reference_values(self, gaussian):
        assert rel_entropy_gaussian(gaussian).value == pytest.approx(H_GAUSS, abs=1e-12)
        assert rel_fisher_gaussian(gaussian).value == pytest.approx(I_GAUSS)
