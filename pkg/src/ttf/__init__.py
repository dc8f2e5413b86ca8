"""Trapezoidal temporal fusion: channel-level LTV curve forecasting.

Short, unaligned per-cohort LTV histories are stacked into date-aligned
trapezoid windows, forecast with a multi-tower smoothing network trained
on the newest cohort only, and scored with user-count-weighted MAPE
metrics.  A small artifact hub plus CLI covers the deployment loop
(publish, train, approve, predict, evaluate, monitor, rollback).
"""

__version__ = "0.1.0"

from .domain import (
    HolidayCalendar,
    LtvCurve,
    LtvDataset,
    load_dataset,
    ltv_n,
    save_dataset,
)
from .errors import TtfError
from .estimator import TtfForecaster
from .evaluation import EvalReport, PredictionRecord, mape, mape_a, mape_p, run_ablation
from .hub import DriftState, Hub, check_drift
from .model import ModelConfig, MtFusionNet, positional_encoding
from .preprocess import inverse_robust_scale, moving_average, robust_scale
from .synthdata import GeneratorConfig, default_calendar, generate
from .training import Adam, TrainConfig, TrainReport, gradient_check, train
from .trapezoid import TrapezoidWindow, WindowSpec, build_window, enumerate_windows

__all__ = [
    "Adam",
    "DriftState",
    "EvalReport",
    "GeneratorConfig",
    "HolidayCalendar",
    "Hub",
    "LtvCurve",
    "LtvDataset",
    "ModelConfig",
    "MtFusionNet",
    "PredictionRecord",
    "TrainConfig",
    "TrainReport",
    "TrapezoidWindow",
    "TtfError",
    "TtfForecaster",
    "WindowSpec",
    "build_window",
    "check_drift",
    "default_calendar",
    "enumerate_windows",
    "generate",
    "gradient_check",
    "inverse_robust_scale",
    "load_dataset",
    "ltv_n",
    "mape",
    "mape_a",
    "mape_p",
    "moving_average",
    "positional_encoding",
    "robust_scale",
    "run_ablation",
    "save_dataset",
    "train",
    "__version__",
]
