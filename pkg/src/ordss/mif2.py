"""Iterated filtering (MIF2) with geometric cooling and identification-aware
parameter perturbations.

Each iteration runs a particle filter in which every particle carries its own
parameter vector, perturbed by a random walk at t = 0 and before every
timepoint; parameters and states are resampled jointly.  Innovation variances
are re-derived from each particle's transition matrix at every perturbation so
the unit-variance identification constraint holds throughout.  Cooling shrinks
the perturbation variance geometrically; after the final iteration the
estimate is the unweighted mean of the parameter swarm.

Transforms keep constraints intact under perturbation: transition entries are
perturbed in natural space with infeasible draws rejected and redrawn,
thresholds as (first, log-intervals), measurement-error variances in log
space.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    EstimationFailureError,
    IdentificationError,
    InvalidInputError,
    StationarityError,
)
from .filtering import FilterOutput, particle_filter
from .measurement import (
    GradedResponseItem,
    GradedResponseModel,
    LinearGaussianMeasurement,
)
from .model_core import (
    ESTIMATION_RHO_MAX,
    DynamicsSpec,
    solve_identification,
    stationary_covariance,
)

MAX_PARAM_REDRAWS = 100
CHUNK_TIMEPOINTS = 64


def cooling_factor(m: int, cooling_fraction_50: float) -> float:
    """Perturbation variance multiplier at iteration m (geometric schedule).

    Equals ``cooling_fraction_50 ** (m / 50)``: 1 at m = 0 and the configured
    fraction after every further 50 iterations.
    """
    if m < 0:
        raise InvalidInputError("iteration index must be >= 0")
    if not 0.0 < cooling_fraction_50 < 1.0:
        raise InvalidInputError("cooling_fraction_50 must be in (0, 1)")
    if m % 50 == 0:
        return cooling_fraction_50 ** (m // 50)
    return cooling_fraction_50 ** (m / 50.0)


@dataclass(frozen=True)
class Mif2Config:
    """Estimator settings; defaults are the simulation study's values."""

    n_particles: int = 1000
    n_iterations: int = 250
    cooling_fraction_50: float = 0.05
    perturb_sd: float = 0.3
    n_runs: int = 4
    seed: int = 0
    rho_max: float = ESTIMATION_RHO_MAX

    def __post_init__(self):
        if self.n_particles < 2:
            raise InvalidInputError("n_particles must be >= 2")
        if self.n_iterations < 1:
            raise InvalidInputError("n_iterations must be >= 1")
        if not 0.0 < self.cooling_fraction_50 < 1.0:
            raise InvalidInputError("cooling_fraction_50 must be in (0, 1)")
        if self.perturb_sd <= 0.0:
            raise InvalidInputError("perturb_sd must be positive")
        if self.n_runs < 1:
            raise InvalidInputError("n_runs must be >= 1")


@dataclass
class GrParams:
    """Decoded GR model parameters: transition matrix and per-item thresholds."""

    A: np.ndarray
    betas: list


@dataclass
class LinearParams:
    """Decoded linear model parameters: transition, loadings, error variances."""

    A: np.ndarray
    loadings: np.ndarray
    psi_diag: np.ndarray


class GrParameterSpace:
    """Encode/decode between GR parameters and the MIF2 perturbation space.

    Layout: p*p transition entries in natural space, then per item the first
    threshold followed by log-intervals between consecutive thresholds.
    """

    model_kind = "grm"

    def __init__(self, item_state, n_categories, alpha=None, p: int = 2):
        self.p = int(p)
        self.item_state = np.asarray(item_state, dtype=np.int64)
        self.n_categories = np.asarray(n_categories, dtype=np.int64)
        q = self.item_state.size
        if self.n_categories.shape != (q,):
            raise InvalidInputError("n_categories must align with item_state")
        if np.any(self.n_categories < 2):
            raise InvalidInputError("every item needs at least 2 categories")
        if np.any((self.item_state < 0) | (self.item_state >= self.p)):
            raise InvalidInputError("item_state entries must be in [0, p)")
        self.alpha = (np.ones(q) if alpha is None
                      else np.asarray(alpha, dtype=np.float64))
        if np.any(self.alpha <= 0.0):
            raise InvalidInputError("alpha values must be positive")
        self.th_off = np.zeros(q + 1, dtype=np.int64)
        for i in range(q):
            self.th_off[i + 1] = self.th_off[i] + self.n_categories[i] - 1
        self.n_params = self.p * self.p + int(self.th_off[-1])

    @property
    def n_items(self) -> int:
        return self.item_state.size

    def natural_names(self) -> list:
        names = [f"a_{r + 1}_{c + 1}" for r in range(self.p) for c in range(self.p)]
        for i in range(self.n_items):
            names += [f"item{i + 1}_beta{j + 1}"
                      for j in range(int(self.n_categories[i]) - 1)]
        return names

    def pack_natural(self, params: GrParams) -> np.ndarray:
        return np.concatenate([np.asarray(params.A, dtype=np.float64).ravel()]
                              + [np.asarray(b, dtype=np.float64) for b in params.betas])

    def unpack_natural(self, vec: np.ndarray) -> GrParams:
        psq = self.p * self.p
        A = np.asarray(vec[:psq], dtype=np.float64).reshape(self.p, self.p).copy()
        betas = [vec[psq + self.th_off[i]:psq + self.th_off[i + 1]].copy()
                 for i in range(self.n_items)]
        return GrParams(A=A, betas=betas)

    def encode(self, params: GrParams) -> np.ndarray:
        theta = np.empty(self.n_params)
        psq = self.p * self.p
        theta[:psq] = np.asarray(params.A, dtype=np.float64).ravel()
        for i, b in enumerate(params.betas):
            b = np.asarray(b, dtype=np.float64)
            if b.size != self.n_categories[i] - 1:
                raise InvalidInputError(f"item {i}: wrong number of thresholds")
            if np.any(np.diff(b) <= 0.0):
                raise InvalidInputError(f"item {i}: thresholds must be increasing")
            lo = psq + self.th_off[i]
            theta[lo] = b[0]
            theta[lo + 1:lo + b.size] = np.log(np.diff(b))
        return theta

    def decode(self, theta: np.ndarray) -> GrParams:
        psq = self.p * self.p
        A = theta[:psq].reshape(self.p, self.p).copy()
        betas = []
        for i in range(self.n_items):
            lo = psq + self.th_off[i]
            hi = psq + self.th_off[i + 1]
            raw = theta[lo:hi]
            b = np.empty(raw.size)
            b[0] = raw[0]
            if raw.size > 1:
                b[1:] = raw[0] + np.cumsum(np.exp(raw[1:]))
            betas.append(b)
        return GrParams(A=A, betas=betas)

    def initial_params(self) -> GrParams:
        """Study starting point: A = 0.1 I, first threshold -2, intervals 0.36."""
        A = 0.1 * np.eye(self.p)
        betas = [-2.0 + 0.36 * np.arange(int(j) - 1, dtype=np.float64)
                 for j in self.n_categories]
        return GrParams(A=A, betas=betas)

    def build_models(self, params: GrParams):
        dynamics = DynamicsSpec.from_transition(params.A)
        items = tuple(
            GradedResponseItem(alpha=float(self.alpha[i]), betas=params.betas[i],
                               state_index=int(self.item_state[i]))
            for i in range(self.n_items))
        return dynamics, GradedResponseModel(items=items)

    def is_valid(self, params: GrParams) -> bool:
        for i, b in enumerate(params.betas):
            if b.size != self.n_categories[i] - 1 or np.any(np.diff(b) <= 0.0):
                return False
        try:
            solve_identification(params.A)
        except (IdentificationError, StationarityError, InvalidInputError):
            return False
        return True

    def prepare_data(self, data) -> np.ndarray:
        data = np.asarray(data)
        out = data.astype(np.int64)
        if np.any(out != data):
            raise InvalidInputError("GR observations must be integers")
        if out.ndim != 2 or out.shape[1] != self.n_items:
            raise InvalidInputError(f"data must be (T, {self.n_items})")
        for i in range(self.n_items):
            if out[:, i].min() < 1 or out[:, i].max() > self.n_categories[i]:
                raise InvalidInputError(
                    f"item {i}: categories outside [1, {self.n_categories[i]}]")
        return out

    def run_chunk(self, theta, x, y_chunk, sd, pert, prop, unifs, rho_max,
                  redraw_seed, t_base, loglik_out):
        return _kernels.mif2_chunk_gr(
            theta, x, y_chunk, self.item_state, self.alpha, self.th_off,
            self.n_categories, self.p, sd, pert, prop, unifs, rho_max,
            MAX_PARAM_REDRAWS + 1, redraw_seed, t_base, loglik_out)


class LinearParameterSpace:
    """Encode/decode for the linear approximation model.

    Layout: p*p transition entries, one log-loading per item (the known item
    to state map fixes C's sparsity), then log measurement-error variances.
    Loadings are kept positive: with centered responses the measurement
    likelihood is invariant to jointly flipping a state and its loadings, so
    unconstrained loadings make every estimate sign-ambiguous and
    run-averaging meaningless.
    """

    model_kind = "linear"

    def __init__(self, item_state, p: int = 2):
        self.p = int(p)
        self.item_state = np.asarray(item_state, dtype=np.int64)
        if np.any((self.item_state < 0) | (self.item_state >= self.p)):
            raise InvalidInputError("item_state entries must be in [0, p)")
        self.n_params = self.p * self.p + 2 * self.n_items

    @property
    def n_items(self) -> int:
        return self.item_state.size

    def natural_names(self) -> list:
        names = [f"a_{r + 1}_{c + 1}" for r in range(self.p) for c in range(self.p)]
        names += [f"loading_{i + 1}" for i in range(self.n_items)]
        names += [f"psi_{i + 1}" for i in range(self.n_items)]
        return names

    def pack_natural(self, params: LinearParams) -> np.ndarray:
        return np.concatenate([np.asarray(params.A, dtype=np.float64).ravel(),
                               np.asarray(params.loadings, dtype=np.float64),
                               np.asarray(params.psi_diag, dtype=np.float64)])

    def unpack_natural(self, vec: np.ndarray) -> LinearParams:
        psq = self.p * self.p
        q = self.n_items
        return LinearParams(
            A=vec[:psq].reshape(self.p, self.p).copy(),
            loadings=vec[psq:psq + q].copy(),
            psi_diag=vec[psq + q:psq + 2 * q].copy())

    def encode(self, params: LinearParams) -> np.ndarray:
        psi = np.asarray(params.psi_diag, dtype=np.float64)
        loadings = np.asarray(params.loadings, dtype=np.float64)
        if np.any(psi <= 0.0):
            raise InvalidInputError("psi_diag entries must be positive")
        if np.any(loadings <= 0.0):
            raise InvalidInputError("loadings must be positive")
        return np.concatenate([np.asarray(params.A, dtype=np.float64).ravel(),
                               np.log(loadings), np.log(psi)])

    def decode(self, theta: np.ndarray) -> LinearParams:
        psq = self.p * self.p
        q = self.n_items
        return LinearParams(
            A=theta[:psq].reshape(self.p, self.p).copy(),
            loadings=np.exp(theta[psq:psq + q]),
            psi_diag=np.exp(theta[psq + q:psq + 2 * q]))

    def initial_params(self) -> LinearParams:
        """Study starting point: A = 0.1 I, loadings 1, error variances 1."""
        return LinearParams(A=0.1 * np.eye(self.p),
                            loadings=np.ones(self.n_items),
                            psi_diag=np.ones(self.n_items))

    def build_models(self, params: LinearParams):
        dynamics = DynamicsSpec.from_transition(params.A)
        C = np.zeros((self.n_items, self.p))
        C[np.arange(self.n_items), self.item_state] = params.loadings
        return dynamics, LinearGaussianMeasurement(C=C, psi_diag=params.psi_diag)

    def is_valid(self, params: LinearParams) -> bool:
        if np.any(np.asarray(params.psi_diag) <= 0.0):
            return False
        if np.any(np.asarray(params.loadings) <= 0.0):
            return False
        try:
            solve_identification(params.A)
        except (IdentificationError, StationarityError, InvalidInputError):
            return False
        return True

    def prepare_data(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != self.n_items:
            raise InvalidInputError(f"data must be (T, {self.n_items})")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("observations contain non-finite values")
        return data

    def run_chunk(self, theta, x, y_chunk, sd, pert, prop, unifs, rho_max,
                  redraw_seed, t_base, loglik_out):
        return _kernels.mif2_chunk_linear(
            theta, x, y_chunk, self.item_state, self.p, sd, pert, prop, unifs,
            rho_max, MAX_PARAM_REDRAWS + 1, redraw_seed, t_base, loglik_out)


def center_columns(data) -> np.ndarray:
    """Column-centered copy of the data.

    The linear approximation model's measurement equation has no intercept,
    so ordinal responses are centered at their per-item sample means before
    a linear fit.
    """
    data = np.asarray(data, dtype=np.float64)
    return data - data.mean(axis=0, keepdims=True)


def _check_swarm_identification(space, theta, sample: int = 3):
    idx = np.linspace(0, theta.shape[0] - 1, sample).astype(int)
    for k in idx:
        params = space.decode(theta[k])
        sigma_diag, _ = solve_identification(params.A)
        gamma = stationary_covariance(params.A, np.diag(sigma_diag))
        if np.max(np.abs(np.diag(gamma) - 1.0)) > 1e-8:
            raise IdentificationError(
                f"particle {k}: stationary variance deviates from 1")


def mif2_run(space, data, config: Mif2Config, seed_seq,
             init_params=None, verify_identification: bool = False):
    """One MIF2 run; returns (decoded params, loglik trace, n_kept).

    ``seed_seq`` is a ``np.random.SeedSequence`` (or int) giving this run its
    own stream.  ``n_kept`` counts particle-steps whose A perturbation was
    abandoned (previous feasible block kept) after exhausting redraws.
    Raises EstimationFailureError on filter degeneracy or an infeasible
    current transition matrix.
    """
    if not isinstance(seed_seq, np.random.SeedSequence):
        seed_seq = np.random.SeedSequence(seed_seq)
    y = space.prepare_data(data)
    T = y.shape[0]
    K = config.n_particles
    D = space.n_params
    p = space.p
    if init_params is None:
        init_params = space.initial_params()
    theta0 = space.encode(init_params)
    rng_child, redraw_child = seed_seq.spawn(2)
    rng = np.random.default_rng(rng_child)
    redraw_base = int(redraw_child.generate_state(1, np.uint64)[0])
    theta = np.tile(theta0, (K, 1))
    sd_base = np.full(D, config.perturb_sd)
    trace = np.zeros(config.n_iterations)
    A_dump = np.empty((K, p, p))
    sig_dump = np.empty((K, p))
    loglik_buf = np.empty(CHUNK_TIMEPOINTS)
    n_kept_total = 0
    for m in range(config.n_iterations):
        # cooling_factor scales the perturbation SD (intensity), matching the
        # convention of the reference iterated-filtering implementations
        sd = sd_base * cooling_factor(m, config.cooling_fraction_50)
        redraw_seed = np.uint64(_kernels.mix64(redraw_base ^ (m + 1)))
        normals0 = rng.standard_normal((K, D))
        fail, kept = _kernels.perturb_params(theta, p, sd, normals0,
                                             config.rho_max,
                                             MAX_PARAM_REDRAWS + 1,
                                             redraw_seed, 0, A_dump, sig_dump)
        n_kept_total += kept
        if fail >= 0:
            raise EstimationFailureError(
                f"iteration {m}: particle {fail} has an infeasible "
                f"transition matrix")
        x = rng.standard_normal((K, p))
        total = 0.0
        for t0 in range(0, T, CHUNK_TIMEPOINTS):
            tc = min(CHUNK_TIMEPOINTS, T - t0)
            pert = rng.standard_normal((tc, K, D))
            prop = rng.standard_normal((tc, K, p))
            unifs = rng.random((tc, K))
            code, where, kept = space.run_chunk(theta, x, y[t0:t0 + tc], sd,
                                                pert, prop, unifs,
                                                config.rho_max, redraw_seed,
                                                t0 + 1, loglik_buf[:tc])
            n_kept_total += kept
            if code == 1:
                raise EstimationFailureError(
                    f"iteration {m}: all particle weights underflowed at "
                    f"t={t0 + where}")
            if code == 2:
                raise EstimationFailureError(
                    f"iteration {m}: particle {where} has an infeasible "
                    f"transition matrix")
            total += float(np.sum(loglik_buf[:tc]))
        trace[m] = total
        if verify_identification:
            _check_swarm_identification(space, theta)
    return space.decode(theta.mean(axis=0)), trace, n_kept_total


def average_params(space, params_list: list):
    """Elementwise mean of decoded parameter estimates (natural space)."""
    if not params_list:
        raise InvalidInputError("nothing to average")
    stacked = np.stack([space.pack_natural(pr) for pr in params_list])
    return space.unpack_natural(stacked.mean(axis=0))


@dataclass
class FitResult:
    """Multi-run MIF2 estimate with its final filtering pass."""

    model_kind: str
    averaged: object
    per_run: list
    loglik_traces: list
    filtered_means: np.ndarray
    final_loglik: float
    effective_sample_sizes: Optional[np.ndarray]
    failed_runs: list
    config: Mif2Config
    diagnostics: Optional[list] = None  # per successful run, e.g. kept_A counts


def fit(space, data, config: Mif2Config, init_params=None,
        verify_identification: bool = False) -> FitResult:
    """Run ``config.n_runs`` independent MIF2 runs and average the estimates.

    Averaging is elementwise over decoded (natural) parameters; a final
    particle filter at the averaged estimate supplies filtered state means
    and a final log-likelihood.  Failed runs are excluded from the average
    and recorded in ``failed_runs``.
    """
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.n_runs + 1)
    per_run = []
    traces = []
    failed = []
    diagnostics = []
    for r in range(config.n_runs):
        try:
            params_r, trace_r, n_kept = mif2_run(
                space, data, config, children[r], init_params=init_params,
                verify_identification=verify_identification)
            per_run.append(params_r)
            traces.append(trace_r)
            diagnostics.append({"run": r, "kept_A": int(n_kept)})
        except EstimationFailureError as exc:
            failed.append({"run": r, "error": str(exc)})
    if not per_run:
        raise EstimationFailureError(
            f"all {config.n_runs} runs failed: {failed}")
    averaged = average_params(space, per_run)
    try:
        dynamics, meas = space.build_models(averaged)
    except Exception as exc:
        raise EstimationFailureError(
            f"averaged estimate decodes to an infeasible model: {exc}") from exc
    pf_rng = np.random.default_rng(children[-1])
    out: FilterOutput = particle_filter(dynamics, meas, space.prepare_data(data),
                                        config.n_particles, pf_rng)
    return FitResult(model_kind=space.model_kind, averaged=averaged,
                     per_run=per_run, loglik_traces=traces,
                     filtered_means=out.filtered_means,
                     final_loglik=out.log_likelihood,
                     effective_sample_sizes=out.effective_sample_sizes,
                     failed_runs=failed, config=config,
                     diagnostics=diagnostics)
