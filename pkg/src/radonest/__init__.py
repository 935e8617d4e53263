"""Probabilistic indoor-radon estimation.

Two-stage engine: a quantile regression forest predicts per-floor conditional
distributions of indoor radon; population-weighted Monte Carlo sampling and
hierarchical AGS aggregation turn them into municipality/district/state/
national exposure statistics.
"""

__version__ = "0.1.0"

from .forest import (
    DEFAULT_LEVELS,
    Forest,
    ForestParams,
    Predictor,
    PredictorSchema,
    TrainingSet,
    fit_forest,
    load_forest,
    predict_mean,
    predict_quantiles,
    save_forest,
)
from .distfit import FitResult, ShiftedLognormal, fit_shifted_lognormal
from .population import (
    BuildingRecord,
    FloorOccupancy,
    OccupancyModel,
    floor_population,
    harmonize_age_class,
    scenario_model,
)
from .aggregate import (
    AggregateAccumulator,
    AggregateStats,
    AggregationConfig,
    PipelineConfig,
    finalize,
    merge,
    run_pipeline,
    sample_size,
)

__all__ = [
    "DEFAULT_LEVELS",
    "Forest",
    "ForestParams",
    "Predictor",
    "PredictorSchema",
    "TrainingSet",
    "fit_forest",
    "load_forest",
    "predict_mean",
    "predict_quantiles",
    "save_forest",
    "FitResult",
    "ShiftedLognormal",
    "fit_shifted_lognormal",
    "BuildingRecord",
    "FloorOccupancy",
    "OccupancyModel",
    "floor_population",
    "harmonize_age_class",
    "scenario_model",
    "AggregateAccumulator",
    "AggregateStats",
    "AggregationConfig",
    "PipelineConfig",
    "finalize",
    "merge",
    "run_pipeline",
    "sample_size",
]
