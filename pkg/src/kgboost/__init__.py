"""Randomized oblivious-tree gradient boosting with Gaussian-process posterior sampling."""

from .boosting import BoostConfig, BoostedModel, predict, train, training_trace
from .data import BinnedDataset, FeatureQuantizer, RawDataset, bin_dataset, fit_quantizer, load_csv, quantize
from .metrics import auc_roc, prr, rejection_curve
from .oracle import greedy_kernel, krr_solve, stationary_kernel, weak_kernel
from .posterior import EnsembleSummary, ensemble, sample_posterior, sample_prior
from .tree import TreeStructure, sample_tree, tree_probability

__version__ = "0.1.0"

__all__ = [
    "BinnedDataset", "BoostConfig", "BoostedModel", "EnsembleSummary", "FeatureQuantizer", "RawDataset",
    "TreeStructure", "auc_roc", "bin_dataset", "ensemble", "fit_quantizer", "greedy_kernel", "krr_solve",
    "load_csv", "predict", "prr", "quantize", "rejection_curve", "sample_posterior", "sample_prior",
    "sample_tree", "stationary_kernel", "train", "training_trace", "tree_probability", "weak_kernel",
]
