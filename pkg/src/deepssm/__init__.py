"""Deep state space model for probabilistic time-series forecasting."""

from .data import TimeSeriesDataset, load_dataset
from .evaluation import crps_sample, rolling_window_evaluate
from .forecast import ExogenousSpec, ForecastResult, monte_carlo_forecast
from .model import ModelConfig, ModelParams, init_params
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ExogenousSpec",
    "ForecastResult",
    "ModelConfig",
    "ModelParams",
    "TimeSeriesDataset",
    "TrainConfig",
    "crps_sample",
    "init_params",
    "load_dataset",
    "monte_carlo_forecast",
    "rolling_window_evaluate",
    "train",
]
