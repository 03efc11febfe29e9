"""LSTM ordinal regression for remaining-useful-life estimation with censored data."""

from .data import (DatasetBundle, InstanceSeries, PreparedData, WindowSet, generate_synthetic, load_prepared,
                   parse_cmapss, prepare, save_prepared)
from .ensemble import LSTMOrdinalEnsemble, UncertaintyNormalizer, entropy_uncertainty, esd
from .metrics import EvalThresholds, evaluate, rmse, timeliness_score
from .ordinal import IntervalScheme, decode_rul, encode_censored, encode_failed
from .training import LSTMOrdinalRegressor, grid_search, train

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle", "EvalThresholds", "InstanceSeries", "IntervalScheme", "LSTMOrdinalEnsemble",
    "LSTMOrdinalRegressor", "PreparedData", "UncertaintyNormalizer", "WindowSet", "decode_rul",
    "encode_censored", "encode_failed", "entropy_uncertainty", "esd", "evaluate", "generate_synthetic",
    "grid_search", "load_prepared", "parse_cmapss", "prepare", "rmse", "save_prepared", "timeliness_score",
    "train",
]
