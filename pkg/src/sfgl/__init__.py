"""Scale-free KNN graphs, GCN pseudo-labeling and the graph-language training loop."""

from .dataset import LabelTable, SparseFeatureMatrix, Split, load_features, make_split, tfidf_transform
from .gcn import GcnHyper, GcnParams, normalize_adjacency, train_gcn
from .knn import DirectedKnnGraph, build_knn_graph, degree_report, similarity, symmetrize
from .scalefree import (
    compare_fits, expected_max_degree, fit_exponential, fit_power_law, generate_ba_graph,
    log_binned_histogram,
)

__all__ = [
    "DirectedKnnGraph", "GcnHyper", "GcnParams", "LabelTable", "SparseFeatureMatrix", "Split",
    "build_knn_graph", "compare_fits", "degree_report", "expected_max_degree", "fit_exponential",
    "fit_power_law", "generate_ba_graph", "load_features", "log_binned_histogram", "make_split",
    "normalize_adjacency", "similarity", "symmetrize", "tfidf_transform", "train_gcn",
]
