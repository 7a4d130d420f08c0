"""Detect distribution shift through a model's Shapley explanations."""

from ._backend import active_backend
from .detector import (DetectorReport, DriftAttribution, ExplanationShiftDetector,
                       baseline_suite, build_discrimination_dataset, detect, explain_detector,
                       feature_drift_attribution)
from .models import (LinearModel, LogisticModel, Tree, TreeEnsemble, fit_gbdt,
                     fit_linear_least_squares, fit_logistic_regression, load_model, predict,
                     save_model)
from .shapley import (ExplanationMatrix, brute_force_shapley, explain_dataset,
                      linear_shap_correlated, linear_shap_interventional,
                      treeshap_path_dependent)
from .stats import BootstrapSpec, auc, ks_two_sample, wasserstein1
from .tabular import (DataError, ShiftScenario, TabularDataset, generate_scenario, load_csv,
                      save_csv, split)

__version__ = "0.1.0"

__all__ = [
    "active_backend", "DetectorReport", "DriftAttribution", "ExplanationShiftDetector",
    "baseline_suite", "build_discrimination_dataset", "detect", "explain_detector",
    "feature_drift_attribution", "LinearModel", "LogisticModel", "Tree", "TreeEnsemble",
    "fit_gbdt", "fit_linear_least_squares", "fit_logistic_regression", "load_model", "predict",
    "save_model", "ExplanationMatrix", "brute_force_shapley", "explain_dataset",
    "linear_shap_correlated", "linear_shap_interventional", "treeshap_path_dependent",
    "BootstrapSpec", "auc", "ks_two_sample", "wasserstein1", "DataError", "ShiftScenario",
    "TabularDataset", "generate_scenario", "load_csv", "save_csv", "split",
]
