"""Failure-detection modeling: boosted trees, LASSO and Bayesian logistic
regression, stacking, missingness clustering and Weibull reliability."""

from .bayes import BayesianLogisticRegression, BayesLogisticSpec
from .cluster import MedianImputer, MissingPatternKMeans
from .dataio import Dataset, SyntheticSpec, load_csv, make_synthetic, save_csv
from .gbt import GbtParams, GradientBoostedTreesClassifier
from .lasso import LassoLogisticRegression
from .reliability import WeibullRegression
from .stack import StackedClassifier, StackSpec

__version__ = "0.1.0"

__all__ = [
    "BayesLogisticSpec",
    "BayesianLogisticRegression",
    "Dataset",
    "GbtParams",
    "GradientBoostedTreesClassifier",
    "LassoLogisticRegression",
    "MedianImputer",
    "MissingPatternKMeans",
    "StackSpec",
    "StackedClassifier",
    "SyntheticSpec",
    "WeibullRegression",
    "load_csv",
    "make_synthetic",
    "save_csv",
]
