"""Predictive order determination: cross-fitted tests for the number of
predictive coordinates, with eigenvalue baselines and simulation studies."""

from .data import Dataset, DataError, load_csv, standardize
from .engine import (ConfigError, FoldPlan, PODConfig, PODResult, TestResult, make_fold_plan,
                     select_order, test_dimensions)
from .learners import LearnerSpec, parse_learners
from .losses import Loss, make_loss
from .reducers import ReducerSpec, fit_reducer

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "Dataset", "FoldPlan", "LearnerSpec", "Loss", "PODConfig",
    "PODResult", "ReducerSpec", "TestResult", "fit_reducer", "load_csv", "make_fold_plan",
    "make_loss", "parse_learners", "select_order", "standardize", "test_dimensions",
]
