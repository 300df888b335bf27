import math

import numpy as np
import pytest
from scipy import special as sp

from gomix._special import digamma, log_rising_factorial, trigamma

# Reference values computed once with 40-digit arbitrary-precision arithmetic
# and frozen here, so the in-repo implementations are pinned independently of
# any library they might be compared against.
DIGAMMA_REF = [
    (1e-06, -1000000.57721402),
    (0.001, -1000.5755719318103),
    (0.06, -17.14929260248149),
    (0.25, -4.2274535333762655),
    (0.5, -1.9635100260214235),
    (1.0, -0.5772156649015329),
    (1.5, 0.03648997397857652),
    (2.0, 0.42278433509846713),
    (6.0, 1.7061176684318005),
    (12.5, 2.4851956512749123),
    (100.0, 4.600161852738087),
    (1000000.0, 13.815510057964191),
]

TRIGAMMA_REF = [
    (1e-06, 1000000000001.6449),
    (0.001, 1000001.6425331959),
    (0.06, 279.2893197277689),
    (0.25, 17.19732915450711),
    (0.5, 4.934802200544679),
    (1.0, 1.6449340668482264),
    (1.5, 0.9348022005446793),
    (2.0, 0.6449340668482264),
    (6.0, 0.18132295573711532),
    (12.5, 0.08328522460157838),
    (100.0, 0.010050166663333571),
    (1000000.0, 1.0000005000001667e-06),
]


class TestDigamma:
    @pytest.mark.parametrize("x, want", DIGAMMA_REF)
    def test_frozen_reference(self, x, want):
        got = digamma(x)
        assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-12)

    def test_against_scipy_on_grid(self):
        x = np.concatenate([
            np.geomspace(1e-5, 1.0, 200),
            np.linspace(1.0, 50.0, 200),
            np.geomspace(50.0, 1e6, 50),
        ])
        np.testing.assert_allclose(digamma(x), sp.digamma(x), rtol=1e-11, atol=1e-12)

    def test_recurrence(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.01, 20.0, size=500)
        np.testing.assert_allclose(digamma(x + 1.0), digamma(x) + 1.0 / x, rtol=1e-10)

    def test_scalar_returns_float(self):
        out = digamma(2.0)
        assert isinstance(out, float)

    def test_shape_preserved(self):
        x = np.array([[0.5, 1.0], [2.0, 3.0]])
        assert digamma(x).shape == (2, 2)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            digamma(0.0)
        with pytest.raises(ValueError):
            digamma(np.array([1.0, -2.0]))


class TestTrigamma:
    @pytest.mark.parametrize("x, want", TRIGAMMA_REF)
    def test_frozen_reference(self, x, want):
        # The accuracy contract is 1e-12 absolute on the positive reals; near
        # the series threshold the relative error can be a few ulps larger.
        got = trigamma(x)
        assert math.isclose(got, want, rel_tol=1e-11, abs_tol=1e-12)

    def test_against_scipy_on_grid(self):
        x = np.concatenate([
            np.geomspace(1e-5, 1.0, 200),
            np.linspace(1.0, 50.0, 200),
            np.geomspace(50.0, 1e6, 50),
        ])
        np.testing.assert_allclose(trigamma(x), sp.polygamma(1, x), rtol=1e-11)

    def test_recurrence(self):
        rng = np.random.default_rng(4)
        x = rng.uniform(0.01, 20.0, size=500)
        np.testing.assert_allclose(
            trigamma(x + 1.0), trigamma(x) - 1.0 / x**2, rtol=1e-9
        )

    def test_positive_everywhere(self):
        x = np.geomspace(1e-6, 1e5, 300)
        assert (trigamma(x) > 0).all()

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            trigamma(-1.0)


class TestLogRisingFactorial:
    def test_frozen_reference(self):
        assert math.isclose(
            log_rising_factorial(0.17, 3), -0.8402259255698423, rel_tol=1e-12
        )
        assert math.isclose(
            log_rising_factorial(0.05, 16), 25.06752337994888, rel_tol=1e-12
        )

    def test_zero_terms(self):
        assert log_rising_factorial(2.5, 0) == 0.0

    def test_one_term_is_log_a(self):
        assert math.isclose(log_rising_factorial(1.0, 1), 0.0, abs_tol=1e-15)
        assert math.isclose(
            log_rising_factorial(0.3, 1), math.log(0.3), rel_tol=1e-14
        )

    def test_matches_gammaln_difference(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = float(rng.uniform(0.01, 5.0))
            m = int(rng.integers(0, 25))
            want = sp.gammaln(a + m) - sp.gammaln(a)
            assert math.isclose(
                log_rising_factorial(a, m), want, rel_tol=1e-10, abs_tol=1e-12
            )

    def test_recurrence_in_m(self):
        a = 0.42
        for m in range(1, 12):
            left = log_rising_factorial(a, m)
            right = log_rising_factorial(a, m - 1) + math.log(a + m - 1)
            assert math.isclose(left, right, rel_tol=1e-12, abs_tol=1e-12)
