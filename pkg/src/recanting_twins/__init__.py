"""Recanting-twin path-specific effects with cross-fitted one-step estimators."""

from .data import (Dataset, DatasetError, FoldAssignment, ParseError, SchemaError,
                   assign_folds, load_dataset, validate, write_csv)
from .estimator import (EffectEstimates, Inference, estimate,
                        test_intermediate_confounding)
from .identification import (PATH_WEIGHTS, PATHS, TARGETS, Contrast, PathEffects, Target,
                             decompose, eif_values, plugin_value)
from .nuisance import LearnerSpec, NuisanceValues, fit_nuisances, predict_all
from .simulation import (SETTINGS, ScmConfig, simulate_observed, truth_by_counterfactuals,
                         truth_by_enumeration)

__version__ = "0.1.0"

__all__ = [
    "Contrast", "Dataset", "DatasetError", "EffectEstimates", "FoldAssignment", "Inference",
    "LearnerSpec", "NuisanceValues", "PATHS", "PATH_WEIGHTS", "ParseError", "PathEffects",
    "SETTINGS", "SchemaError", "ScmConfig", "TARGETS", "Target", "assign_folds", "decompose",
    "eif_values", "estimate", "fit_nuisances", "load_dataset", "plugin_value", "predict_all",
    "simulate_observed", "test_intermediate_confounding", "truth_by_counterfactuals",
    "truth_by_enumeration", "validate", "write_csv",
]
