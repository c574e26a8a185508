"""Measurement models: graded response (ordinal) and linear-Gaussian.

Each model exposes a per-timepoint log-likelihood and a sampler.  Items are
conditionally independent given the state vector; a graded-response item
loads on exactly one state through its ``state_index`` selector.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import InvalidInputError

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class GradedResponseItem:
    """One ordinal item: discrimination, increasing thresholds, state selector."""

    alpha: float
    betas: np.ndarray
    state_index: int

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise InvalidInputError("betas must be a non-empty 1-d array")
        if np.any(np.diff(betas) <= 0.0):
            raise InvalidInputError("betas must be strictly increasing")
        if not self.alpha > 0.0:
            raise InvalidInputError("alpha must be positive")
        if self.state_index < 0:
            raise InvalidInputError("state_index must be non-negative")
        object.__setattr__(self, "betas", betas)

    @property
    def n_categories(self) -> int:
        return self.betas.size + 1


@dataclass(frozen=True)
class GradedResponseModel:
    """A set of graded-response items measured at each timepoint."""

    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise InvalidInputError("at least one item is required")

    @property
    def n_items(self) -> int:
        return len(self.items)

    @cached_property
    def _packed(self):
        """Flat arrays consumed by the kernels."""
        item_state = np.array([it.state_index for it in self.items], dtype=np.int64)
        alpha = np.array([it.alpha for it in self.items], dtype=np.float64)
        beta_off = np.zeros(len(self.items) + 1, dtype=np.int64)
        for i, it in enumerate(self.items):
            beta_off[i + 1] = beta_off[i] + it.betas.size
        beta_flat = np.concatenate([it.betas for it in self.items])
        ncat = np.array([it.n_categories for it in self.items], dtype=np.int64)
        return item_state, alpha, beta_flat, beta_off, ncat


@dataclass(frozen=True)
class LinearGaussianMeasurement:
    """Gaussian measurement y = C x + noise with diagonal error covariance."""

    C: np.ndarray
    psi_diag: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=np.float64)
        psi = np.asarray(self.psi_diag, dtype=np.float64)
        if C.ndim != 2:
            raise InvalidInputError("C must be a 2-d loading matrix")
        if psi.shape != (C.shape[0],):
            raise InvalidInputError("psi_diag length must match the number of items")
        if np.any(psi <= 0.0):
            raise InvalidInputError("psi_diag entries must be positive")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "psi_diag", psi)

    @property
    def n_items(self) -> int:
        return self.C.shape[0]


MeasurementModel = Union[GradedResponseModel, LinearGaussianMeasurement]


def gr_exceedance_prob(item: GradedResponseItem, j: int, x) -> float:
    """P(y > j | x) for category index j; j = 0 returns 1 by convention."""
    if j < 0 or j > item.betas.size:
        raise InvalidInputError(f"category index {j} outside [0, {item.betas.size}]")
    if j == 0:
        return 1.0
    delta = float(np.asarray(x, dtype=np.float64)[item.state_index])
    return float(expit(item.alpha * (delta - item.betas[j - 1])))


def gr_category_prob(item: GradedResponseItem, j: int, x) -> float:
    """P(y = j | x) for category j in [1, J]; exceedance(J) is 0."""
    if j < 1 or j > item.n_categories:
        raise InvalidInputError(f"category {j} outside [1, {item.n_categories}]")
    upper = 0.0 if j == item.n_categories else gr_exceedance_prob(item, j, x)
    return gr_exceedance_prob(item, j - 1, x) - upper


def _check_gr_observation(model: GradedResponseModel, y: np.ndarray):
    if y.shape != (model.n_items,):
        raise InvalidInputError(f"observation must have {model.n_items} entries")
    for i, it in enumerate(model.items):
        if not 1 <= y[i] <= it.n_categories:
            raise InvalidInputError(
                f"item {i}: category {y[i]} outside [1, {it.n_categories}]"
            )


def log_likelihood(measurement: MeasurementModel, y, x) -> float:
    """Log-likelihood of one observation vector given one state vector.

    GR categories are floored at 1e-300 before the log so a single extreme
    state cannot produce -inf.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(measurement, GradedResponseModel):
        y = np.asarray(y, dtype=np.int64)
        _check_gr_observation(measurement, y)
        total = 0.0
        for i, item in enumerate(measurement.items):
            total += np.log(max(gr_category_prob(item, int(y[i]), x), PROB_FLOOR))
        return float(total)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (measurement.n_items,):
        raise InvalidInputError(f"observation must have {measurement.n_items} entries")
    resid = y - measurement.C @ x
    psi = measurement.psi_diag
    return float(-0.5 * np.sum(_kernels.LOG2PI + np.log(psi) + resid * resid / psi))


def sample_observation(measurement: MeasurementModel, x, rng: np.random.Generator):
    """Draw one observation vector given the state; one rng per caller."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(measurement, GradedResponseModel):
        out = np.empty(measurement.n_items, dtype=np.int64)
        for i, item in enumerate(measurement.items):
            out[i] = sample_gr_category(item, x, rng)
        return out
    noise = rng.standard_normal(measurement.n_items)
    return measurement.C @ x + np.sqrt(measurement.psi_diag) * noise


def sample_gr_category(item: GradedResponseItem, x, rng: np.random.Generator) -> int:
    """Draw a category via the inverse CDF of the exceedance curve.

    With u uniform, the sampled category is 1 + #{j : exceedance(j) > u},
    which is exactly the categorical distribution of the category
    probabilities.
    """
    delta = float(np.asarray(x, dtype=np.float64)[item.state_index])
    exceed = expit(item.alpha * (delta - item.betas))
    u = rng.random()
    return int(1 + np.sum(exceed > u))
