"""State filtering: bootstrap particle filter and an exact Kalman oracle.

The particle filter follows the basic bootstrap scheme: initial particles
from N(0, I), propagation through the state dynamics, weighting by the
measurement likelihood, and multinomial resampling at every timepoint
(systematic resampling is available behind an option flag but is not the
default).  The log-likelihood accumulates log of the mean unnormalized
weight per timepoint; filtered means are weighted averages taken before
resampling.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import FilterDegeneracyError, InvalidInputError
from .measurement import (
    GradedResponseModel,
    LinearGaussianMeasurement,
    MeasurementModel,
)
from .model_core import DynamicsSpec

RESAMPLING_SCHEMES = ("multinomial", "systematic")


@dataclass
class ParticleEnsemble:
    """K weighted state particles."""

    particles: np.ndarray  # (K, p)
    weights: np.ndarray  # (K,), normalized

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.particles.ndim != 2 or self.particles.shape[0] < 1:
            raise InvalidInputError("particles must be a (K, p) array with K >= 1")
        if self.weights.shape != (self.particles.shape[0],):
            raise InvalidInputError("weights length must match particle count")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise InvalidInputError("weights must be non-negative and sum to 1")

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]


@dataclass
class FilterOutput:
    """Filter results: log-likelihood, E[x_t | y_1:t], and per-t ESS.

    ``effective_sample_sizes`` is None for the exact Kalman filter, which
    has no particle ensemble.
    """

    log_likelihood: float
    filtered_means: np.ndarray  # (T, p)
    effective_sample_sizes: Optional[np.ndarray]  # (T,) or None


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def resample(weights, rng, method: str = "multinomial") -> np.ndarray:
    """Resampling indices with P(index = k) = weights[k].

    Weights must already be normalized.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.size < 1:
        raise InvalidInputError("weights must be a 1-d vector")
    if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-8:
        raise InvalidInputError("weights must be non-negative and sum to 1")
    if method not in RESAMPLING_SCHEMES:
        raise InvalidInputError(f"method must be one of {RESAMPLING_SCHEMES}")
    rng = _as_rng(rng)
    if method == "systematic":
        return _kernels.systematic_from_uniform(weights, rng.random())
    return _kernels.resample_from_uniforms(weights, rng.random(weights.size))


def _check_data(measurement: MeasurementModel, data: np.ndarray) -> np.ndarray:
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidInputError("data must be a (T, q) array")
    if data.shape[1] != measurement.n_items:
        raise InvalidInputError(
            f"data has {data.shape[1]} columns, measurement expects {measurement.n_items}"
        )
    if isinstance(measurement, GradedResponseModel):
        out = data.astype(np.int64)
        if np.any(out != data):
            raise InvalidInputError("GR observations must be integers")
        for i, item in enumerate(measurement.items):
            col = out[:, i]
            if col.min() < 1 or col.max() > item.n_categories:
                raise InvalidInputError(
                    f"item {i}: categories outside [1, {item.n_categories}]"
                )
        return out
    out = data.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise InvalidInputError("observations contain non-finite values")
    return out


def particle_filter(dynamics: DynamicsSpec, measurement: MeasurementModel,
                    data, n_particles: int, rng,
                    resampling: str = "multinomial") -> FilterOutput:
    """Bootstrap particle filter; raises FilterDegeneracyError on underflow.

    Initial particles are drawn from N(0, I) (the filter's f_0, which the
    dynamics burn into the stationary law after the first step).
    """
    if n_particles < 2:
        raise InvalidInputError("n_particles must be >= 2")
    if resampling not in RESAMPLING_SCHEMES:
        raise InvalidInputError(f"resampling must be one of {RESAMPLING_SCHEMES}")
    data = _check_data(measurement, data)
    rng = _as_rng(rng)
    T = data.shape[0]
    K = n_particles
    p = dynamics.p
    init_x = rng.standard_normal((K, p))
    prop_normals = rng.standard_normal((T, K, p))
    systematic = resampling == "systematic"
    if systematic:
        unifs = np.zeros((T, 1))
        sys_unifs = rng.random(T)
    else:
        unifs = rng.random((T, K))
        sys_unifs = np.zeros(T)
    sig_sqrt = np.sqrt(dynamics.sigma_diag)
    if isinstance(measurement, GradedResponseModel):
        item_state, alpha, beta_flat, beta_off, _ = measurement._packed
        loglik, means, ess, fail_t = _kernels.pf_gr(
            dynamics.A, sig_sqrt, data, item_state, alpha, beta_flat, beta_off,
            init_x, prop_normals, unifs, systematic, sys_unifs)
    else:
        loglik, means, ess, fail_t = _kernels.pf_linear(
            dynamics.A, sig_sqrt, data, measurement.C, measurement.psi_diag,
            init_x, prop_normals, unifs, systematic, sys_unifs)
    if fail_t >= 0:
        raise FilterDegeneracyError(int(fail_t))
    return FilterOutput(log_likelihood=float(loglik), filtered_means=means,
                        effective_sample_sizes=ess)


def kalman_filter(dynamics: DynamicsSpec,
                  measurement: LinearGaussianMeasurement, data) -> FilterOutput:
    """Exact filtered means and log-likelihood for the linear-Gaussian model.

    Uses the prediction error decomposition with x_0 ~ N(0, I) to match the
    particle filter's initial distribution.
    """
    if not isinstance(measurement, LinearGaussianMeasurement):
        raise InvalidInputError("kalman_filter requires a linear-Gaussian measurement")
    data = _check_data(measurement, data)
    T = data.shape[0]
    p = dynamics.p
    A = dynamics.A
    sigma = np.diag(dynamics.sigma_diag)
    C = measurement.C
    psi = np.diag(measurement.psi_diag)
    q = measurement.n_items
    mean = np.zeros(p)
    cov = np.eye(p)
    means = np.zeros((T, p))
    loglik = 0.0
    for t in range(T):
        mean_pred = A @ mean
        cov_pred = A @ cov @ A.T + sigma
        innov = data[t] - C @ mean_pred
        s_mat = C @ cov_pred @ C.T + psi
        try:
            chol = np.linalg.cholesky(s_mat)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError(f"innovation covariance not PD at t={t}") from exc
        alpha_vec = np.linalg.solve(chol, innov)
        loglik += -0.5 * (q * _kernels.LOG2PI + alpha_vec @ alpha_vec) \
            - np.sum(np.log(np.diag(chol)))
        gain = cov_pred @ C.T @ np.linalg.solve(s_mat, np.eye(q))
        mean = mean_pred + gain @ innov
        cov = cov_pred - gain @ s_mat @ gain.T
        cov = 0.5 * (cov + cov.T)
        means[t] = mean
    return FilterOutput(log_likelihood=float(loglik), filtered_means=means,
                        effective_sample_sizes=None)
