"""Evaluation harness: proportions, distribution distances and downstream classifiers."""

from .distance import (
    bin_histogram,
    histogram_bounds,
    js_divergence,
    kl_divergence,
    marginal_wasserstein,
    pca_project,
    wasserstein_1d,
)
from .mlp import MLPClassifier, MLPConfig, fit_mlp_classifier
from .reports import (
    BenchmarkConfig,
    ClassifierScores,
    DistanceReport,
    ProportionReport,
    classification_report,
    conditional_proportion_report,
    distance_report,
    downstream_benchmark,
)
from .tree import DecisionTree, fit_decision_tree

__all__ = [
    "BenchmarkConfig", "ClassifierScores", "DecisionTree", "DistanceReport", "MLPClassifier",
    "MLPConfig", "ProportionReport", "bin_histogram", "classification_report",
    "conditional_proportion_report", "distance_report", "downstream_benchmark",
    "fit_decision_tree", "fit_mlp_classifier", "histogram_bounds", "js_divergence",
    "kl_divergence", "marginal_wasserstein", "pca_project", "wasserstein_1d",
]
