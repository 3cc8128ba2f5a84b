"""Joint sparse regression across subgroups with l2 or l1 coefficient fusion."""
from .core import (
    DivergenceError,
    FitResult,
    FusionError,
    FusionNorm,
    FusionWeights,
    GroupedDataset,
    PenaltyConfig,
    SolverOptions,
    StandardizationRecord,
    ValidationError,
    objective_l1,
    objective_l2,
    predict,
    predict_raw,
    soft_threshold,
    standardize_by_group,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceError", "FitResult", "FusionError", "FusionNorm", "FusionWeights",
    "GroupedDataset", "PenaltyConfig", "SolverOptions", "StandardizationRecord",
    "ValidationError", "objective_l1", "objective_l2", "predict", "predict_raw",
    "soft_threshold", "standardize_by_group",
]
