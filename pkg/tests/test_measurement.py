import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from ordss.errors import InvalidInputError
from ordss.measurement import (
    GradedResponseItem,
    GradedResponseModel,
    LinearGaussianMeasurement,
    gr_category_prob,
    gr_exceedance_prob,
    log_likelihood,
    sample_observation,
)


def item(alpha=1.0, betas=(0.0,), state=0):
    return GradedResponseItem(alpha=alpha, betas=np.asarray(betas, dtype=float),
                              state_index=state)


SYMMETRIC_3CAT = item(betas=[-0.5, 0.5])


class TestExceedance:
    def test_logistic_at_threshold(self):
        assert gr_exceedance_prob(item(betas=[0.0]), 1, [0.0]) == pytest.approx(0.5)

    def test_promis_hopeless_item(self):
        # "felt hopeless": alpha 4.46, betas [.49, 1.00, 1.71, 2.46]; at the
        # first threshold the exceedance curve crosses one half.
        it = item(alpha=4.46, betas=[0.49, 1.00, 1.71, 2.46])
        assert gr_exceedance_prob(it, 1, [0.49]) == pytest.approx(0.5, abs=1e-12)

    def test_direct_evaluation(self):
        assert gr_exceedance_prob(item(betas=[-1.0]), 1, [0.0]) == pytest.approx(
            0.7310585786300049, abs=1e-12)

    def test_j_zero_is_one(self):
        assert gr_exceedance_prob(SYMMETRIC_3CAT, 0, [3.0]) == 1.0

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            gr_exceedance_prob(SYMMETRIC_3CAT, 3, [0.0])

    def test_decreasing_in_j_increasing_in_state(self):
        it = item(alpha=1.3, betas=[-1.0, -0.2, 0.4, 1.7], state=0)
        for x in (-3.0, -0.5, 0.0, 1.2, 4.0):
            probs = [gr_exceedance_prob(it, j, [x]) for j in range(5)]
            assert all(a > b for a, b in zip(probs, probs[1:]))
        for j in (1, 2, 3, 4):
            vals = [gr_exceedance_prob(it, j, [x]) for x in (-2.0, 0.0, 2.0)]
            assert vals[0] < vals[1] < vals[2]


class TestCategoryProb:
    def test_symmetric_three_categories(self):
        probs = [gr_category_prob(SYMMETRIC_3CAT, j, [0.0]) for j in (1, 2, 3)]
        assert probs == pytest.approx(
            [0.3775406687981454, 0.2449186624037092, 0.3775406687981454], abs=1e-7)

    def test_two_category_symmetry(self):
        assert gr_category_prob(item(betas=[0.0]), 1, [0.0]) == pytest.approx(0.5)
        assert gr_category_prob(item(betas=[0.0]), 2, [0.0]) == pytest.approx(0.5)

    def test_normalization(self):
        it = item(alpha=2.2, betas=[-1.5, 0.1, 0.9])
        for x in np.linspace(-10, 10, 41):
            total = sum(gr_category_prob(it, j, [x]) for j in range(1, 5))
            assert abs(total - 1.0) < 1e-12

    def test_invalid_category(self):
        with pytest.raises(InvalidInputError):
            gr_category_prob(SYMMETRIC_3CAT, 0, [0.0])
        with pytest.raises(InvalidInputError):
            gr_category_prob(SYMMETRIC_3CAT, 4, [0.0])


class TestLogLikelihood:
    def test_single_binary_item(self):
        model = GradedResponseModel(items=(item(betas=[0.0]),))
        assert log_likelihood(model, [1], [0.0]) == pytest.approx(
            math.log(0.5), abs=1e-12)

    def test_linear_no_loading(self):
        meas = LinearGaussianMeasurement(C=np.zeros((2, 2)), psi_diag=np.ones(2))
        assert log_likelihood(meas, [0.0, 0.0], [5.0, -3.0]) == pytest.approx(
            -1.8378770664093453, abs=1e-12)

    def test_three_item_equal_fixture(self):
        # three identical symmetric 3-category items at delta(x) = 0 with
        # y = (1, 2, 3): the category probabilities are
        # (0.3775407, 0.2449187, 0.3775407); frozen oracle value is the sum
        # of their logs.
        model = GradedResponseModel(items=(SYMMETRIC_3CAT,) * 3)
        want = sum(math.log(p) for p in
                   (0.3775406687981454, 0.2449186624037092, 0.3775406687981454))
        got = log_likelihood(model, [1, 2, 3], [0.0])
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(-3.3549830821075086, abs=1e-9)

    def test_linear_matches_multivariate_normal(self):
        rng = np.random.default_rng(7)
        C = rng.normal(size=(4, 2))
        psi = rng.uniform(0.3, 2.0, 4)
        meas = LinearGaussianMeasurement(C=C, psi_diag=psi)
        for _ in range(10):
            x = rng.normal(size=2)
            y = rng.normal(size=4)
            want = multivariate_normal(mean=C @ x, cov=np.diag(psi)).logpdf(y)
            assert log_likelihood(meas, y, x) == pytest.approx(want, abs=1e-10)

    def test_location_equivariance(self):
        shift = 1.7
        base = item(alpha=1.4, betas=[-0.8, 0.3, 1.1])
        shifted = item(alpha=1.4, betas=np.array([-0.8, 0.3, 1.1]) + shift)
        m1 = GradedResponseModel(items=(base,))
        m2 = GradedResponseModel(items=(shifted,))
        for y in (1, 2, 3, 4):
            a = log_likelihood(m1, [y], [0.4])
            b = log_likelihood(m2, [y], [0.4 + shift])
            assert a == pytest.approx(b, abs=1e-12)

    def test_extreme_state_stays_finite(self):
        model = GradedResponseModel(items=(item(betas=[-1.0, 1.0]),))
        assert np.isfinite(log_likelihood(model, [3], [-800.0]))
        assert np.isfinite(log_likelihood(model, [1], [800.0]))

    def test_category_out_of_range(self):
        model = GradedResponseModel(items=(SYMMETRIC_3CAT,))
        with pytest.raises(InvalidInputError):
            log_likelihood(model, [4], [0.0])


class TestSampleObservation:
    def test_saturation(self):
        model = GradedResponseModel(items=(item(betas=[-1.0, 0.0, 1.0]),))
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert sample_observation(model, [100.0], rng)[0] == 4

    def test_zero_noise_linear(self):
        meas = LinearGaussianMeasurement(C=np.array([[1.0, 0.0], [0.5, 0.5]]),
                                         psi_diag=np.full(2, 1e-30))
        x = np.array([0.7, -0.2])
        y = sample_observation(meas, x, np.random.default_rng(1))
        assert np.allclose(y, meas.C @ x, atol=1e-12)

    def test_empirical_frequencies(self):
        it = item(alpha=1.2, betas=[-0.7, 0.4])
        model = GradedResponseModel(items=(it,))
        x = [0.3]
        n = 100_000
        rng = np.random.default_rng(42)
        draws = np.array([sample_observation(model, x, rng)[0] for _ in range(n)])
        for j in (1, 2, 3):
            p = gr_category_prob(it, j, x)
            se = math.sqrt(p * (1 - p) / n)
            assert abs((draws == j).mean() - p) < 3 * se


class TestValidation:
    def test_betas_must_increase(self):
        with pytest.raises(InvalidInputError):
            item(betas=[0.5, -0.5])

    def test_alpha_positive(self):
        with pytest.raises(InvalidInputError):
            item(alpha=0.0)

    def test_psi_positive(self):
        with pytest.raises(InvalidInputError):
            LinearGaussianMeasurement(C=np.ones((1, 1)), psi_diag=np.array([0.0]))
