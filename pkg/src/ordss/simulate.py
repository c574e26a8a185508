"""Dataset generation for the two-state graded-response study design.

The study's transition matrix is [[ar, cr], [0, ar]] with innovation
variances derived from the unit-variance identification constraint.  Items
split evenly across the two states; thresholds follow either the "equal"
rule (the sequence 1..J-1 centered on zero, shared by all items) or the
"offset" rule (the equal set shifted per item, symmetrically around zero,
with the shift step capped at 1.25).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .measurement import GradedResponseItem, GradedResponseModel, sample_gr_category
from .model_core import DynamicsSpec

THRESHOLD_MODES = ("equal", "offset")
OFFSET_STEP_CAP = 1.25


@dataclass(frozen=True)
class SimulationRecipe:
    """One cell of the data-generating design."""

    timepoints: int
    ar: float
    cr: float
    items_per_state: int
    n_categories: int
    threshold_mode: str = "equal"
    seed: int = 0
    n_states: int = 2

    def __post_init__(self):
        if self.timepoints < 1:
            raise InvalidInputError("timepoints must be >= 1")
        if self.n_categories < 2:
            raise InvalidInputError("n_categories must be >= 2")
        if self.items_per_state < 1:
            raise InvalidInputError("items_per_state must be >= 1")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise InvalidInputError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.n_states != 2:
            raise InvalidInputError("the study design uses exactly 2 states")


def make_equal_thresholds(n_categories: int) -> np.ndarray:
    """Thresholds 1..J-1 centered on zero; strictly increasing with mean 0."""
    if n_categories < 2:
        raise InvalidInputError("n_categories must be >= 2")
    seq = np.arange(1, n_categories, dtype=np.float64)
    return seq - seq.mean()


def make_offset_thresholds(n_items: int, n_categories: int) -> list[np.ndarray]:
    """Per-item threshold sets shifted symmetrically around the equal set.

    The shift between neighbouring items is min(n_items / (J - 1), 1.25);
    item k (1-based) is shifted by (k - (n_items + 1) / 2) times the step.
    """
    if n_items < 1:
        raise InvalidInputError("n_items must be >= 1")
    base = make_equal_thresholds(n_categories)
    step = min(n_items / (n_categories - 1), OFFSET_STEP_CAP)
    center = (n_items + 1) / 2.0
    return [base + (k - center) * step for k in range(1, n_items + 1)]


def threshold_sets(mode: str, n_items: int, n_categories: int) -> list[np.ndarray]:
    """Per-item thresholds for one state under the given mode."""
    if mode == "equal":
        return [make_equal_thresholds(n_categories) for _ in range(n_items)]
    if mode == "offset":
        return make_offset_thresholds(n_items, n_categories)
    raise InvalidInputError(f"unknown threshold mode {mode!r}")


def build_study_model(recipe: SimulationRecipe):
    """Dynamics and GR measurement model for one design cell."""
    A = np.array([[recipe.ar, recipe.cr], [0.0, recipe.ar]])
    dynamics = DynamicsSpec.from_transition(A)
    items = []
    for state in range(recipe.n_states):
        for betas in threshold_sets(recipe.threshold_mode, recipe.items_per_state,
                                    recipe.n_categories):
            items.append(GradedResponseItem(alpha=1.0, betas=betas, state_index=state))
    return dynamics, GradedResponseModel(items=tuple(items))


def simulate_states(dynamics: DynamicsSpec, timepoints: int,
                    rng: np.random.Generator) -> np.ndarray:
    """States x_1..x_T with x_0 drawn from the stationary distribution.

    Starting from N(0, Gamma) keeps the whole trajectory stationary, so the
    empirical per-state variance of the output is 1 up to Monte-Carlo error.
    """
    chol = np.linalg.cholesky(dynamics.gamma)
    x0 = chol @ rng.standard_normal(dynamics.p)
    normals = rng.standard_normal((timepoints, dynamics.p))
    return _kernels.simulate_states(dynamics.A, np.sqrt(dynamics.sigma_diag),
                                    x0, normals)


def simulate_dataset(recipe: SimulationRecipe):
    """States (T, p) and ordinal observations (T, q) for one design cell.

    The master seed splits into one substream for the state path and one per
    item, so changing the number of items never perturbs the states.
    """
    dynamics, model = build_study_model(recipe)
    root = np.random.SeedSequence(recipe.seed)
    streams = root.spawn(1 + model.n_items)
    state_rng = np.random.default_rng(streams[0])
    states = simulate_states(dynamics, recipe.timepoints, state_rng)
    obs = np.empty((recipe.timepoints, model.n_items), dtype=np.int64)
    for i, item in enumerate(model.items):
        item_rng = np.random.default_rng(streams[1 + i])
        for t in range(recipe.timepoints):
            obs[t, i] = sample_gr_category(item, states[t], item_rng)
    return states, obs
