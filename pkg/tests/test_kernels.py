"""Kernel-level unit and property tests."""

import numpy as np
import pytest

from gpbounds.kernels import (
    HyperVector,
    KernelFamily,
    KernelSpec,
    cross_vector,
    gram_matrix,
    kernel_eval,
)

SE = KernelFamily.SQUARED_EXPONENTIAL
M52 = KernelFamily.MATERN52


def spec_of(ls, sf2=1.0, sn2=0.1, family=SE):
    return KernelSpec(family, HyperVector(np.atleast_1d(ls), sf2, sn2))


class TestHyperVector:
    def test_rejects_nonpositive_entries(self):
        with pytest.raises(ValueError):
            HyperVector([0.0], 1.0, 1.0)
        with pytest.raises(ValueError):
            HyperVector([1.0], -1.0, 1.0)
        with pytest.raises(ValueError):
            HyperVector([1.0], 1.0, 0.0)

    def test_array_round_trip(self):
        hv = HyperVector([0.5, 2.0], 3.0, 0.25)
        back = HyperVector.from_array(hv.to_array())
        np.testing.assert_allclose(back.lengthscales, hv.lengthscales)
        assert back.signal_variance == hv.signal_variance
        assert back.noise_variance == hv.noise_variance
        np.testing.assert_allclose(HyperVector.from_log_array(hv.to_log_array()).to_array(), hv.to_array())


class TestKernelEval:
    def test_zero_lag_equals_signal_variance(self):
        assert kernel_eval(spec_of([1.0]), [0.0], [0.0]) == 1.0
        assert kernel_eval(spec_of([1.0], sf2=3.5, family=M52), [0.0], [0.0]) == 3.5

    def test_se_closed_form(self):
        # lag (2, 0) with lengthscales (2, 2): scaled distance 1
        value = kernel_eval(spec_of([2.0, 2.0]), [0.0, 0.0], [2.0, 0.0])
        np.testing.assert_allclose(value, np.exp(-0.5), rtol=1e-15)

    def test_matern_closed_form(self):
        r = 0.7
        t = np.sqrt(5.0) * r
        value = kernel_eval(spec_of([1.0], family=M52), [0.0], [r])
        np.testing.assert_allclose(value, (1 + t + t * t / 3) * np.exp(-t), rtol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(spec_of([1.0, 1.0]), [0.0], [0.0])

    def test_symmetry_and_bound(self):
        rng = np.random.default_rng(0)
        spec = spec_of([0.5, 1.5, 3.0], sf2=2.0, family=M52)
        for _ in range(25):
            a, b = rng.normal(size=3), rng.normal(size=3)
            kab = kernel_eval(spec, a, b)
            assert kab == kernel_eval(spec, b, a)
            assert abs(kab) <= 2.0 + 1e-15
            assert kernel_eval(spec, a, a) == 2.0


class TestGram:
    def test_single_point(self):
        K = gram_matrix(spec_of([1.0], sf2=2.5), np.array([[0.3]]))
        np.testing.assert_allclose(K, [[2.5]])

    def test_duplicate_rows_rank_deficient(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0]])
        K = gram_matrix(spec_of([1.0, 1.0], sf2=1.7), X)
        np.testing.assert_allclose(K, 1.7 * np.ones((2, 2)))

    @pytest.mark.parametrize("family", [SE, M52])
    def test_psd_up_to_jitter(self, family):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 2))
        K = gram_matrix(spec_of([0.8, 1.2], sf2=2.0, family=family), X)
        assert np.linalg.eigvalsh(K).min() >= -1e-10 * 2.0
        np.testing.assert_allclose(K, K.T)
        np.testing.assert_allclose(np.diag(K), 2.0)


class TestCrossVector:
    def test_training_row_hits_signal_variance(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(4, 2))
        spec = spec_of([1.0, 1.0], sf2=3.0)
        k = cross_vector(spec, X, X[2])
        np.testing.assert_allclose(k[2], 3.0)

    def test_far_query_decays(self):
        X = np.zeros((3, 1))
        k = cross_vector(spec_of([0.1], sf2=2.0), X, np.array([10.0]))
        assert np.all(k < 1e-6 * 2.0)

    def test_single_row_at_one_lengthscale_lag(self):
        k = cross_vector(spec_of([2.0], sf2=1.5), np.array([[0.0]]), np.array([2.0]))
        np.testing.assert_allclose(k, [1.5 * np.exp(-0.5)], rtol=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            cross_vector(spec_of([1.0]), np.zeros((2, 1)), np.zeros(2))


class TestScaledGramDomination:
    """gamma^2 K_low - K_mid stays PSD for sorted lengthscale triples."""

    @pytest.mark.parametrize("family", [SE, M52])
    def test_random_triples(self, family):
        worst = np.inf
        for trial in range(60):
            rng = np.random.default_rng([10, trial])
            d = int(rng.integers(1, 4))
            n = int(rng.integers(1, 16))
            X = rng.uniform(-3, 3, size=(n, d))
            draws = np.sort(np.exp(rng.uniform(np.log(0.1), np.log(10), size=(3, d))), axis=0)
            gamma2 = np.prod(draws[2] / draws[0])
            K_low = gram_matrix(spec_of(draws[0], family=family), X)
            K_mid = gram_matrix(spec_of(draws[1], family=family), X)
            worst = min(worst, np.linalg.eigvalsh(gamma2 * K_low - K_mid).min())
        assert worst >= -1e-8

    def test_monotone_decay_in_scaled_distance(self):
        lags = np.linspace(0.0, 8.0, 60)
        for family in (SE, M52):
            spec = spec_of([1.0], family=family)
            values = np.array([kernel_eval(spec, [0.0], [lag]) for lag in lags])
            assert np.all(np.diff(values) <= 1e-15)
