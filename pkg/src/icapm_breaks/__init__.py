"""Conditional ICAPM with time-varying market integration, plus mean-shift dating.

Modules: ``data`` (ingestion and diagnostics), ``icapm`` (model and filter),
``estimate`` (QML fit and inference), ``breaks`` (multiple structural breaks),
``simulate`` (synthetic data) and ``cli``.
"""

from ._backend import BACKEND
from .breaks import SegmentationProblem, analyze, dp_partition, select_num_breaks
from .errors import (
    ConditioningError,
    ConfigError,
    DataError,
    EstimationError,
    IcapmBreaksError,
    InfeasibleError,
)
from .estimate import FitResult, OptimizerConfig, fit, wald_test
from .icapm import FilterOutput, ModelParams, neg_loglik, run_filter
from .simulate import DgpSpec, StepSpec, simulate_icapm, simulate_mean_shift

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConditioningError",
    "ConfigError",
    "DataError",
    "DgpSpec",
    "EstimationError",
    "FilterOutput",
    "FitResult",
    "IcapmBreaksError",
    "InfeasibleError",
    "ModelParams",
    "OptimizerConfig",
    "SegmentationProblem",
    "StepSpec",
    "analyze",
    "dp_partition",
    "fit",
    "neg_loglik",
    "run_filter",
    "select_num_breaks",
    "simulate_icapm",
    "simulate_mean_shift",
    "wald_test",
]
