"""Shapley-value attribution of a summarize-and-score pipeline's output to its
input documents, with cluster-level acceleration, sampling approximators,
baselines, a benchmark harness and revenue payouts."""

from .approx import KernelShapConfig, McConfig, TmcConfig, kernel_shap, monte_carlo, truncated_monte_carlo
from .baselines import equal_attribution, relevance_weighted
from .bench import FrontierPoint, LipschitzScan, error_metrics, frontier, lipschitz_scan, variance_decomposition
from .cluster import ClusteringConfig, adaptive_dbscan, cosine_distance, distance_matrix, standard_dbscan
from .core import (
    Attribution,
    ClusterAssignment,
    Coalition,
    DistanceMatrix,
    Document,
    EmbeddingVector,
    Query,
    ValuationGame,
)
from .cshap import cluster_shapley, cluster_shapley_approx, corollary2_sample_size, theorem1_bound, theorem2_bound
from .errors import BackendError, DocvalError, SchemaError, ValidationError
from .exact import exact_shapley
from .retrieval import min_word_filter, top_k
from .revenue import RevenueReport, combined_payout, expected_value, query_payout, subscription_payout
from .valuefn import AdditiveSource, CoverageSource, TableSource, synth_game, table_game

__version__ = "0.1.0"

__all__ = [
    "AdditiveSource",
    "Attribution",
    "BackendError",
    "ClusterAssignment",
    "ClusteringConfig",
    "Coalition",
    "CoverageSource",
    "DistanceMatrix",
    "DocvalError",
    "Document",
    "EmbeddingVector",
    "FrontierPoint",
    "KernelShapConfig",
    "LipschitzScan",
    "McConfig",
    "Query",
    "RevenueReport",
    "SchemaError",
    "TableSource",
    "TmcConfig",
    "ValidationError",
    "ValuationGame",
    "adaptive_dbscan",
    "cluster_shapley",
    "cluster_shapley_approx",
    "combined_payout",
    "corollary2_sample_size",
    "cosine_distance",
    "distance_matrix",
    "equal_attribution",
    "error_metrics",
    "exact_shapley",
    "expected_value",
    "frontier",
    "kernel_shap",
    "lipschitz_scan",
    "min_word_filter",
    "monte_carlo",
    "query_payout",
    "relevance_weighted",
    "standard_dbscan",
    "subscription_payout",
    "synth_game",
    "table_game",
    "theorem1_bound",
    "theorem2_bound",
    "top_k",
    "truncated_monte_carlo",
    "variance_decomposition",
]
