"""Grasping-force estimation from forearm sEMG.

Windowed MAV/RMS/WL features feed a state-space model identified by
recursive least squares; a stationary Kalman filter refines its output.
MLP, NARX and LDA+QPF regressors are provided for comparison.
"""

from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    DivergenceError,
    GraspForceError,
    InvalidArgumentError,
    NumericalFailureError,
)
from .features import FeatureMatrix, SessionRecording, WindowSpec, extract_features, normalize
from .kalman import KalmanEstimator, kf_run, riccati_iterate, tune
from .metrics import nrmse, r2
from .pipeline import PipelineConfig
from .ssid import StateSpaceModel, analyze, identify, select_order, simulate

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DivergenceError",
    "FeatureMatrix",
    "GraspForceError",
    "InvalidArgumentError",
    "KalmanEstimator",
    "NumericalFailureError",
    "PipelineConfig",
    "SessionRecording",
    "StateSpaceModel",
    "WindowSpec",
    "analyze",
    "extract_features",
    "identify",
    "kf_run",
    "normalize",
    "nrmse",
    "r2",
    "riccati_iterate",
    "select_order",
    "simulate",
    "tune",
]
