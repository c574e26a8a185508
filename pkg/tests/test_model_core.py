import numpy as np
import pytest

from ordss.errors import (
    IdentificationError,
    InfeasibleDynamicsError,
    InvalidInputError,
    StationarityError,
)
from ordss.model_core import (
    DynamicsSpec,
    solve_identification,
    spectral_radius_ok,
    stationary_covariance,
)


def closed_form_2x2(a, c):
    """Independent oracle for the study's triangular A = [[a, c], [0, a]].

    gamma = a*c / (1 - a^2); sigma_2 = 1 - a^2;
    sigma_1 = 1 - a^2 - c^2 - 2*a*c*gamma.
    """
    gamma = a * c / (1.0 - a * a)
    sigma2 = 1.0 - a * a
    sigma1 = 1.0 - a * a - c * c - 2.0 * a * c * gamma
    return np.array([sigma1, sigma2]), gamma


class TestSpectralRadiusOk:
    def test_zero_matrix(self):
        assert spectral_radius_ok(np.zeros((2, 2)), 0.0)

    def test_unit_root(self):
        assert not spectral_radius_ok(np.array([[1.0]]), 0.0)

    def test_triangular_with_margin(self):
        # eigenvalues of an upper-triangular matrix are its diagonal
        assert spectral_radius_ok(np.array([[0.3, 0.25], [0.0, 0.3]]), 0.02)

    def test_margin_excludes(self):
        assert not spectral_radius_ok(np.array([[0.97, 0.0], [0.0, 0.1]]), 0.05)

    def test_non_square_rejected(self):
        with pytest.raises(InvalidInputError):
            spectral_radius_ok(np.zeros((2, 3)), 0.0)

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            spectral_radius_ok(np.array([[np.nan, 0.0], [0.0, 0.1]]), 0.0)


class TestStationaryCovariance:
    def test_no_dynamics(self):
        gamma = stationary_covariance(np.zeros((2, 2)), np.eye(2))
        assert np.allclose(gamma, np.eye(2), atol=1e-14)

    def test_scalar(self):
        gamma = stationary_covariance(np.array([[0.5]]), np.array([[0.75]]))
        assert np.allclose(gamma, [[1.0]], atol=1e-14)

    def test_triangular_closed_form(self):
        a, c = 0.3, 0.25
        sigma_diag, gamma_12 = closed_form_2x2(a, c)
        A = np.array([[a, c], [0.0, a]])
        gamma = stationary_covariance(A, np.diag(sigma_diag))
        assert np.allclose(gamma, [[1.0, gamma_12], [gamma_12, 1.0]], atol=1e-10)

    def test_fixed_point_random(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            p = int(rng.integers(1, 5))
            A = rng.normal(0.0, 0.5, (p, p))
            rho = np.max(np.abs(np.linalg.eigvals(A)))
            if rho >= 0.95:
                A *= 0.9 / rho
            sigma = np.diag(rng.uniform(0.2, 2.0, p))
            gamma = stationary_covariance(A, sigma)
            assert np.max(np.abs(gamma - A @ gamma @ A.T - sigma)) < 1e-10
            assert np.allclose(gamma, gamma.T)


class TestSolveIdentification:
    def test_decoupled_states(self):
        sigma_diag, gamma = solve_identification(np.diag([0.3, 0.3]))
        assert np.allclose(sigma_diag, [0.91, 0.91], atol=1e-12)
        assert abs(gamma[0, 1]) < 1e-12

    def test_scalar(self):
        sigma_diag, gamma = solve_identification(np.array([[0.7]]))
        assert np.allclose(sigma_diag, [0.51], atol=1e-12)
        assert gamma.shape == (1, 1) and abs(gamma[0, 0] - 1.0) < 1e-12

    def test_triangular_closed_form(self):
        want_sigma, want_gamma = closed_form_2x2(0.3, 0.25)
        sigma_diag, gamma = solve_identification(np.array([[0.3, 0.25], [0.0, 0.3]]))
        assert np.allclose(sigma_diag, want_sigma, atol=1e-12)
        assert abs(gamma[0, 1] - want_gamma) < 1e-12

    def test_fixed_point_and_unit_diagonal(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 50:
            p = int(rng.integers(2, 5))
            A = rng.normal(0.0, 0.4, (p, p))
            rho = np.max(np.abs(np.linalg.eigvals(A)))
            if rho > 0:
                A *= rng.uniform(0.1, 0.9) / rho
            try:
                sigma_diag, gamma = solve_identification(A)
            except InfeasibleDynamicsError:
                continue
            assert np.max(np.abs(np.diag(gamma) - 1.0)) < 1e-10
            resid = gamma - A @ gamma @ A.T - np.diag(sigma_diag)
            assert np.max(np.abs(resid)) < 1e-10
            # second route: the generic Lyapunov solver must give unit diagonal
            gamma2 = stationary_covariance(A, np.diag(sigma_diag))
            assert np.max(np.abs(np.diag(gamma2) - 1.0)) < 1e-8
            checked += 1

    def test_deterministic_bitwise(self):
        A = np.array([[0.31, 0.21], [-0.17, 0.55]])
        s1, g1 = solve_identification(A)
        s2, g2 = solve_identification(A.copy())
        assert s1.tobytes() == s2.tobytes()
        assert g1.tobytes() == g2.tobytes()

    def test_infeasible_rejected_not_clipped(self):
        # stationary (rho = 0.7) but the implied sigma_1 is negative
        with pytest.raises(InfeasibleDynamicsError):
            solve_identification(np.array([[0.7, 0.7], [0.0, 0.7]]))

    def test_nonstationary_rejected(self):
        with pytest.raises(StationarityError):
            solve_identification(np.array([[1.05, 0.0], [0.0, 0.2]]))

    def test_simulated_variance_matches(self):
        # 1e5-step simulation: per-state variance within 3 MC SEs of 1
        from ordss.simulate import simulate_states

        A = np.array([[0.3, 0.25], [0.0, 0.3]])
        dyn = DynamicsSpec.from_transition(A)
        rng = np.random.default_rng(123)
        T = 100_000
        states = simulate_states(dyn, T, rng)
        for i in range(2):
            # SE of the empirical variance of a stationary Gaussian series:
            # sqrt(2/T * sum_tau acov(tau)^2), acov(tau) = (A^tau Gamma)_ii
            acov_sq = 0.0
            M = np.eye(2)
            for _ in range(200):
                acov_sq += (M @ dyn.gamma)[i, i] ** 2 * (2.0 if _ > 0 else 1.0)
                M = A @ M
            se = np.sqrt(2.0 * acov_sq / T)
            assert abs(states[:, i].var() - 1.0) < 3.0 * se


class TestDynamicsSpec:
    def test_from_transition(self):
        spec = DynamicsSpec.from_transition(np.array([[0.3, 0.25], [0.0, 0.3]]))
        assert spec.p == 2
        assert np.allclose(np.diag(spec.gamma), 1.0)
        assert np.all(spec.sigma_diag > 0)
        assert np.allclose(spec.sigma, np.diag(spec.sigma_diag))

    def test_rejects_inconsistent_gamma(self):
        with pytest.raises(InvalidInputError):
            DynamicsSpec(A=np.zeros((2, 2)), sigma_diag=np.ones(2),
                         gamma=2.0 * np.eye(2))

    def test_rejects_bad_sigma(self):
        with pytest.raises(InvalidInputError):
            DynamicsSpec(A=np.zeros((2, 2)), sigma_diag=np.array([1.0, -0.1]),
                         gamma=np.eye(2))
