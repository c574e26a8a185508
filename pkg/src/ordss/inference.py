"""Slice-likelihood standard errors and Wald confidence intervals.

Near the MLE the log-likelihood is approximately quadratic, so slicing one
parameter at a time over an equispaced grid and fitting loglik ~ a + b*d +
c*d^2 by least squares estimates the diagonal of the Fisher information:
SE = 1 / sqrt(-2c).  Off-diagonal information is ignored.  Particle-filter
evaluations are replicated and averaged per grid point to damp Monte-Carlo
noise; slices over transition-matrix entries re-solve the identification
constraint at every grid point.  These SEs are known to be liberal; the
99.8% Wald interval (3.09 SE) is the recommended conservative default.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FilterDegeneracyError,
    IdentificationError,
    InvalidInputError,
    StationarityError,
)
from .filtering import kalman_filter, particle_filter
from .mif2 import FitResult

WALD_Z = {0.95: 1.96, 0.998: 3.09}


@dataclass(frozen=True)
class SliceConfig:
    """Grid geometry and evaluation settings for slice likelihoods."""

    n_points: int = 21
    half_width: float = 0.5
    replicates: int = 3
    n_particles: int = 1000
    seed: int = 0
    param_names: tuple = ()  # empty = all estimated parameters
    use_kalman: bool = False  # exact evaluations; linear model only

    def __post_init__(self):
        if self.n_points < 5 or self.n_points % 2 == 0:
            raise InvalidInputError("n_points must be odd and >= 5")
        if self.half_width <= 0.0:
            raise InvalidInputError("half_width must be positive")
        if self.replicates < 1:
            raise InvalidInputError("replicates must be >= 1")
        object.__setattr__(self, "param_names", tuple(self.param_names))


@dataclass
class SliceSEResult:
    """Per-parameter SEs with curvature estimates and raw slice points."""

    se: dict
    curvature: dict
    slice_points: dict  # name -> (grid values, mean logliks)
    flags: dict = field(default_factory=dict)  # name -> reason SE is missing


def wald_ci(estimate: float, se: float, level: float):
    """Wald interval estimate +/- z * se with z = 1.96 (95%) or 3.09 (99.8%)."""
    if level not in WALD_Z:
        raise InvalidInputError(f"level must be one of {sorted(WALD_Z)}")
    if not se > 0.0:
        raise InvalidInputError("se must be positive")
    z = WALD_Z[level]
    return estimate - z * se, estimate + z * se


def fit_quadratic(deltas, logliks):
    """Least-squares coefficients (a, b, c) of loglik ~ a + b*d + c*d^2."""
    deltas = np.asarray(deltas, dtype=np.float64)
    logliks = np.asarray(logliks, dtype=np.float64)
    X = np.column_stack([np.ones_like(deltas), deltas, deltas * deltas])
    coef, *_ = np.linalg.lstsq(X, logliks, rcond=None)
    return coef[0], coef[1], coef[2]


def slice_se_from_evaluations(center: float, values, logliks):
    """SE and curvature from raw slice evaluations of one parameter.

    Returns ``(se, curvature, flag)``; ``se`` is nan with a reason flag when
    the fitted curvature is non-negative.
    """
    values = np.asarray(values, dtype=np.float64)
    _, _, c = fit_quadratic(values - center, logliks)
    if c >= 0.0:
        return float("nan"), float(c), "flat-slice"
    return 1.0 / np.sqrt(-2.0 * c), float(c), ""


def _grid(center: float, config: SliceConfig) -> np.ndarray:
    return np.linspace(center - config.half_width, center + config.half_width,
                       config.n_points)


def slice_se(fit: FitResult, space, data, config: SliceConfig) -> SliceSEResult:
    """Slice-likelihood SEs around a fitted model.

    For each requested parameter the log-likelihood is evaluated on an
    equispaced grid centered at the estimate, holding all other parameters
    fixed; grid points where the model is infeasible (non-stationary A,
    non-increasing thresholds, non-positive variances) are dropped.  Fewer
    than five usable points flags the parameter instead of reporting an SE.
    """
    if fit.failed_runs:
        raise InvalidInputError("slice_se requires a fit with no failed runs")
    if config.use_kalman and space.model_kind != "linear":
        raise InvalidInputError("use_kalman is only valid for the linear model")
    data = space.prepare_data(data)
    names = list(config.param_names) if config.param_names else space.natural_names()
    all_names = space.natural_names()
    missing = [n for n in names if n not in all_names]
    if missing:
        raise InvalidInputError(f"unknown parameter names: {missing}")
    center_vec = space.pack_natural(fit.averaged)
    root = np.random.SeedSequence(config.seed)
    se = {}
    curvature = {}
    slice_points = {}
    flags = {}
    for name in names:
        j = all_names.index(name)
        grid = _grid(center_vec[j], config)
        point_streams = root.spawn(len(grid))
        vals = []
        lls = []
        for g_idx, value in enumerate(grid):
            vec = center_vec.copy()
            vec[j] = value
            params = space.unpack_natural(vec)
            if not space.is_valid(params):
                continue
            try:
                dynamics, meas = space.build_models(params)
            except (IdentificationError, StationarityError, InvalidInputError):
                continue
            try:
                if config.use_kalman:
                    ll = kalman_filter(dynamics, meas, data).log_likelihood
                else:
                    reps = point_streams[g_idx].spawn(config.replicates)
                    ll = float(np.mean([
                        particle_filter(dynamics, meas, data, config.n_particles,
                                        np.random.default_rng(reps[r])).log_likelihood
                        for r in range(config.replicates)
                    ]))
            except FilterDegeneracyError:
                continue
            vals.append(value)
            lls.append(ll)
        slice_points[name] = (np.array(vals), np.array(lls))
        if len(vals) < 5:
            se[name] = float("nan")
            curvature[name] = float("nan")
            flags[name] = "insufficient-grid"
            continue
        s, c, flag = slice_se_from_evaluations(center_vec[j], vals, lls)
        se[name] = s
        curvature[name] = c
        if flag:
            flags[name] = flag
    return SliceSEResult(se=se, curvature=curvature, slice_points=slice_points,
                         flags=flags)
