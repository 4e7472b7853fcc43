"""Post-hoc uncertainty quantification for binary classifiers.

Calibrators (Platt, isotonic, Venn-ABERS), transductive conformal p-values,
selective-prediction metrics, a leave-one-out experiment harness, and
radiotherapy dose-feature preprocessing.
"""

from posthoc_uq.core import (
    Dataset,
    InputError,
    PredictionRecord,
    ScoreLabelPair,
    UQMethod,
    decide_label,
    uncertainty_score,
)
from posthoc_uq.calibrators import (
    IsotonicModel,
    PlattParams,
    VennAbersModel,
    isotonic_predict,
    pava_fit,
    platt_apply,
    platt_fit,
    venn_abers_predict,
)
from posthoc_uq.conformal import ConformalModel, conformal_predict, nonconformity, p_value
from posthoc_uq.metrics import (
    MetricsReport,
    ReliabilityBin,
    ace,
    auprc,
    auroc,
    coverage_curve,
    reliability_bins,
    threshold_table,
)

__version__ = "0.1.0"

__all__ = [
    "ConformalModel",
    "Dataset",
    "InputError",
    "IsotonicModel",
    "MetricsReport",
    "PlattParams",
    "PredictionRecord",
    "ReliabilityBin",
    "ScoreLabelPair",
    "UQMethod",
    "VennAbersModel",
    "ace",
    "auprc",
    "auroc",
    "conformal_predict",
    "coverage_curve",
    "decide_label",
    "isotonic_predict",
    "nonconformity",
    "p_value",
    "pava_fit",
    "platt_apply",
    "platt_fit",
    "reliability_bins",
    "threshold_table",
    "uncertainty_score",
    "venn_abers_predict",
]
