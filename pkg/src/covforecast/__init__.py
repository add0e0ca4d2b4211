"""Covariate-aware LSTM forecasting of daily epidemic case and death counts."""
from .data import (
    CovariateTable, Dataset, MetroArea, Scaler, TimeSeriesRecord, WindowedSamples,
    aggregate_metro, build_dataset, cumulative_to_daily, dataset_from_daily,
    fit_value_scaler, normalize_covariates, validate_monotonic, window_samples,
)
from .model import (
    EvalReport, ForecastModel, ModelConfig, TrainReport, build_model, evaluate,
    load_model, masked_weighted_mse, predict, save_model, train,
)
from .registry import FactorRegistry, NONE_FACTOR, SWEEP_FACTORS

__version__ = "0.1.0"

__all__ = [
    "CovariateTable", "Dataset", "MetroArea", "Scaler", "TimeSeriesRecord", "WindowedSamples",
    "aggregate_metro", "build_dataset", "cumulative_to_daily", "dataset_from_daily",
    "fit_value_scaler", "normalize_covariates", "validate_monotonic", "window_samples",
    "EvalReport", "ForecastModel", "ModelConfig", "TrainReport", "build_model", "evaluate",
    "load_model", "masked_weighted_mse", "predict", "save_model", "train",
    "FactorRegistry", "NONE_FACTOR", "SWEEP_FACTORS",
]
