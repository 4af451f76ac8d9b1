"""Survey-weighted multilevel logistic regression with post-hoc sandwich
adjustment of pseudo-posterior draws."""

__version__ = "0.1.0"

from .estimators import SandwichAdjuster, SurveyMixedLogit
from .exceptions import (
    ConditioningError,
    ConvergenceError,
    DataError,
    DesignError,
    DimensionError,
    DomainError,
    NonFiniteError,
    SamplerDivergence,
    SvyAdjustError,
)
from .model import ParamLayout, PriorSpec, SurveyDataset
from .replication import ReplicateDesign, estimate_J, make_design
from .sampler import PosteriorDraws, SamplerConfig, sample_pseudo_posterior
from .sandwich import VARIANTS, AdjustmentResult, CurvatureSet, adjust_draws
from .simulation import CoverageReport, PopulationSpec, StudyConfig, run_study
from .transform import YJTransform, yj_adjust

__all__ = [
    "AdjustmentResult",
    "ConditioningError",
    "ConvergenceError",
    "CoverageReport",
    "CurvatureSet",
    "DataError",
    "DesignError",
    "DimensionError",
    "DomainError",
    "NonFiniteError",
    "ParamLayout",
    "PopulationSpec",
    "PosteriorDraws",
    "PriorSpec",
    "ReplicateDesign",
    "SamplerConfig",
    "SamplerDivergence",
    "SandwichAdjuster",
    "StudyConfig",
    "SurveyDataset",
    "SurveyMixedLogit",
    "SvyAdjustError",
    "VARIANTS",
    "YJTransform",
    "adjust_draws",
    "estimate_J",
    "make_design",
    "run_study",
    "sample_pseudo_posterior",
    "yj_adjust",
]
