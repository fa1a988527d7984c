"""Adaptive-confidence outlier exposure on desk-scale synthetic data."""

from aoe.detection import Detector, ScoreKind, calibrate_threshold, classify, energy_score, msp_score
from aoe.estimator import OutlierExposureClassifier
from aoe.metrics import EvalReport, auroc, evaluate, fpr_at_tpr, id_accuracy
from aoe.rng import SeededRng

__all__ = [
    "Detector",
    "EvalReport",
    "OutlierExposureClassifier",
    "ScoreKind",
    "SeededRng",
    "auroc",
    "calibrate_threshold",
    "classify",
    "energy_score",
    "evaluate",
    "fpr_at_tpr",
    "id_accuracy",
    "msp_score",
]

__version__ = "0.1.0"
