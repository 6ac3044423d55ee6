"""Oocyte viability assessment from light-microscopy segmentation masks.

Localization, 24 geometric and texture descriptors, an RBF SVM trained by SMO,
and the evaluation battery, plus a synthetic scene generator with known truth.
"""
from .features import FEATURE_NAMES, FeatureExtractor, FeatureVector, ZScoreScaler, extract_features
from .geometry import Ellipse, compute_geometry, fit_ellipse
from .morphology import Roi, extract_roi, localize
from .svm import SMOClassifier, grid_search, loo_accuracy
from .texture import compute_texture, uwt_haar3

__version__ = "0.1.0"

__all__ = [
    "FEATURE_NAMES",
    "Ellipse",
    "FeatureExtractor",
    "FeatureVector",
    "Roi",
    "SMOClassifier",
    "ZScoreScaler",
    "compute_geometry",
    "compute_texture",
    "extract_features",
    "extract_roi",
    "fit_ellipse",
    "grid_search",
    "localize",
    "loo_accuracy",
    "uwt_haar3",
]
