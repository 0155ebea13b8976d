"""Sparsity-aware calibration of prediction intervals for count forecasts."""
from ._backend import BACKEND
from .calib import CalibratedIntervals, CalibratorModel, Kind, apply_calibrator, fit_calibrator
from .data import CountPanel, SplitIndex, SyntheticSpec, generate_synthetic, ingest_csv, split
from .dist import Family, PredictiveDistribution
from .errors import DomainError, MetricUndefinedError, ParseError, StateError
from .forecaster import DistortionSpec, ForecastSet, fit_seasonal_nb, oracle_forecast, predict
from .metrics import MetricsReport, coverage, ence

__all__ = [
    "BACKEND", "CalibratedIntervals", "CalibratorModel", "Kind", "apply_calibrator", "fit_calibrator",
    "CountPanel", "SplitIndex", "SyntheticSpec", "generate_synthetic", "ingest_csv", "split",
    "Family", "PredictiveDistribution", "DomainError", "MetricUndefinedError", "ParseError",
    "StateError", "DistortionSpec", "ForecastSet", "fit_seasonal_nb", "oracle_forecast", "predict",
    "MetricsReport", "coverage", "ence",
]
