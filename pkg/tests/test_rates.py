import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kacsphere import rates
from kacsphere.errors import PreconditionError

GRID = list(itertools.product(range(1, 11), np.linspace(0.2, 2.0, 10), np.linspace(0.0, 4.5, 10)))


class TestW2:
    def test_heavy_case(self):
        assert rates.w2_rate(100, 6) == pytest.approx(0.1)

    def test_light_case(self):
        assert rates.w2_rate(100, 3) == pytest.approx(100 ** (-1 / 3))

    def test_borderline_log(self):
        assert rates.w2_rate(math.e**2, 4) == pytest.approx(2 / math.e)

    def test_constant_unknown(self):
        p = rates.w2_prediction(6)
        assert not p.constant_known
        with pytest.raises(ValueError):
            p.bound(10)

    @pytest.mark.parametrize("p", [2.0, 1.0])
    def test_domain(self, p):
        with pytest.raises(PreconditionError):
            rates.w2_rate(10, p)


class TestWr:
    def test_b_and_shape(self):
        b, shape = rates.wr_rate(100, 6, 3)
        assert b == pytest.approx(0.75)
        assert shape == pytest.approx(100**-0.375)

    def test_continuity_at_two(self):
        b, shape = rates.wr_rate(100, 6, 2 + 1e-12)
        assert b == pytest.approx(1.0)
        assert shape == pytest.approx(rates.w2_rate(100, 6))

    def test_light_tail(self):
        b, shape = rates.wr_rate(100, 3.5, 3)
        assert b == pytest.approx(1 / 3)
        assert shape == pytest.approx(100 ** (-(1 / 3) * (1 - 2 / 3.5)))

    @pytest.mark.parametrize("p,r", [(6, 2), (6, 6), (3, 4)])
    def test_domain(self, p, r):
        with pytest.raises(PreconditionError):
            rates.wr_b(p, r)


class TestL1Exponents:
    def test_case_one(self):
        assert rates.l1_eta(1, 2, 0) == pytest.approx(0.25)
        assert rates.l1_qstar(1, 2, 0) == pytest.approx(0.375)

    def test_case_two(self):
        # r enters the first exponent, giving 1/11 rather than 1/12
        assert rates.l1_eta(2, 1, 1) == pytest.approx(1 / 11)
        assert rates.l1_qstar(2, 1, 1) == pytest.approx(3 / 11)
        e1, e2, e3 = rates.eta_components(3 / 11, 2, 1, 1)
        assert e1 == pytest.approx(1 / 11) and e2 == pytest.approx(1 / 11)
        assert e3 > 1 / 11

    def test_vanishing_delta(self):
        assert rates.l1_eta(1, 1e-9, 0) < 1e-9

    @pytest.mark.parametrize("args", [(0, 1, 0), (1, 0, 0), (1, 2.5, 0), (1, 1, -1)])
    def test_domain(self, args):
        with pytest.raises(PreconditionError):
            rates.l1_eta(*args)

    def test_numeric_maximisation(self):
        for k, d, r in GRID:
            eta, q = rates.l1_eta_numeric(k, d, r)
            assert eta == pytest.approx(rates.l1_eta(k, d, r), abs=1e-6)
            assert q == pytest.approx(rates.l1_qstar(k, d, r), abs=1e-3)

    def test_eta2_below_eta3(self):
        qs = np.linspace(0, 1, 1001)
        for k, d, r in GRID:
            _, e2, e3 = rates.eta_components(qs, k, d, r)
            assert np.all(e2 <= e3 + 1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 20), st.floats(0.01, 2.0), st.floats(0.0, 10.0))
    def test_consistency_at_qstar(self, k, d, r):
        e1, e2, _ = rates.eta_components(rates.l1_qstar(k, d, r), k, d, r)
        eta = rates.l1_eta(k, d, r)
        assert e1 == pytest.approx(eta, rel=1e-12) and e2 == pytest.approx(eta, rel=1e-12)

    def test_prediction_bundle(self):
        p = rates.l1_prediction(1, 2, 0)
        assert p.exponent == 0.25 and p.extra["q_star"] == 0.375 and p.extra["n_min"] == 4


class TestEpsilon:
    def test_regression_constant(self):
        d = 1 - 2**-0.5
        expected = (10 + 2 * (1 + 2 / d**0.5)) / d
        _, c = rates.epsilon_N(1, 0.5, 100)
        assert c == pytest.approx(expected, rel=1e-14)
        assert c == pytest.approx(66.205138988, rel=1e-10)

    def test_limit_q_to_one(self):
        assert rates.c_kq(1, 1 - 1e-12) == pytest.approx(2 * (12 + 4 * math.sqrt(2)), rel=1e-9)

    def test_monotone(self):
        eps, _ = rates.epsilon_N(2, 0.25, np.array([10, 100, 1000, 10_000]))
        assert np.all(np.diff(eps) < 0)

    def test_domain(self):
        with pytest.raises(PreconditionError):
            rates.epsilon_N(1, 1.0, 10)
        with pytest.raises(PreconditionError):
            rates.epsilon_N(1, 0.5, 1)

    def test_remark_constants_sharper(self):
        sharp = rates.remark_constants(2, 0.5, 100)
        assert max(sharp.values()) < rates.c_kq(2, 0.5)


class TestOtherRates:
    def test_entropic(self):
        p = rates.entropic_rate(6)
        assert p.exponent == pytest.approx(1 / 14) and p.strict
        assert p.extra["companion_exponent"] == pytest.approx(0.5)

    def test_vonbahr(self):
        assert rates.vonbahr_bound(256, 0.25, 2, 3) == pytest.approx(3.0)

    def test_vonbahr_caps_delta(self):
        assert rates.vonbahr_bound(256, 0.25, 5, 3) == rates.vonbahr_bound(256, 0.25, 2, 3)

    def test_n_min(self):
        assert rates.n_min(1, 2) == pytest.approx(4.0)
        assert rates.n_min(1, 2, q=0.4) == pytest.approx(max(4.0, 2 ** (1 / 0.6)))

    def test_conditioned(self):
        assert rates.conditioned_rate(2).exponent == 0.5
        with pytest.raises(PreconditionError):
            rates.conditioned_rate(3)

    def test_default_delta(self):
        assert rates.default_delta(math.inf) == 2.0
        assert rates.default_delta(3.0) == pytest.approx(0.99)

    def test_to_dict(self):
        d = rates.wr_prediction(6, 3).to_dict()
        assert d["b"] == 0.75 and d["constant"] is None
