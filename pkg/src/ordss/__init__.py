"""State-space models with ordinal (graded response) or linear-Gaussian
measurements, estimated by iterated particle filtering with a stationary
unit-variance identification constraint."""

from ._kernels import backend_name
from .errors import (
    EstimationFailureError,
    FilterDegeneracyError,
    IdentificationError,
    InfeasibleDynamicsError,
    InvalidInputError,
    OrdssError,
    StationarityError,
    UndefinedCorrelationError,
)
from .filtering import FilterOutput, ParticleEnsemble, kalman_filter, particle_filter, resample
from .inference import SliceConfig, SliceSEResult, slice_se, wald_ci
from .measurement import (
    GradedResponseItem,
    GradedResponseModel,
    LinearGaussianMeasurement,
    gr_category_prob,
    gr_exceedance_prob,
    log_likelihood,
    sample_observation,
)
from .mif2 import (
    FitResult,
    GrParameterSpace,
    GrParams,
    LinearParameterSpace,
    LinearParams,
    Mif2Config,
    center_columns,
    cooling_factor,
    fit,
    mif2_run,
)
from .model_core import (
    DynamicsSpec,
    solve_identification,
    spectral_radius,
    spectral_radius_ok,
    stationary_covariance,
)
from .simulate import (
    SimulationRecipe,
    build_study_model,
    make_equal_thresholds,
    make_offset_thresholds,
    simulate_dataset,
)
from .study import StudyCondition, run_study, score_replicate, spearman

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "DynamicsSpec", "solve_identification", "spectral_radius",
    "spectral_radius_ok", "stationary_covariance",
    "GradedResponseItem", "GradedResponseModel", "LinearGaussianMeasurement",
    "gr_category_prob", "gr_exceedance_prob", "log_likelihood",
    "sample_observation",
    "SimulationRecipe", "build_study_model", "make_equal_thresholds",
    "make_offset_thresholds", "simulate_dataset",
    "FilterOutput", "ParticleEnsemble", "kalman_filter", "particle_filter",
    "resample",
    "FitResult", "GrParameterSpace", "GrParams", "LinearParameterSpace",
    "LinearParams", "Mif2Config", "center_columns", "cooling_factor", "fit",
    "mif2_run",
    "SliceConfig", "SliceSEResult", "slice_se", "wald_ci",
    "StudyCondition", "run_study", "score_replicate", "spearman",
    "OrdssError", "InvalidInputError", "StationarityError",
    "IdentificationError", "InfeasibleDynamicsError", "FilterDegeneracyError",
    "EstimationFailureError", "UndefinedCorrelationError",
]
