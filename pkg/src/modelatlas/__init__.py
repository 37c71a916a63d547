"""Recover and analyse model lineage atlases from weight fingerprints."""

from .charting import ChartingConfig, RhoPolicy, chart, chart_components, chart_with_trace
from .core import Atlas, Edge, EdgeKind, ModelNode
from .distance import DistanceMatrix, compute_distance_matrix, knn
from .evaluation import EvalReport, benchmark, evaluate_charting, make_split, run_method
from .export import export_dot, export_gexf, export_json, validate_gexf
from .syngen import SyntheticSpec, generate

__version__ = "0.1.0"

__all__ = [
    "Atlas",
    "ChartingConfig",
    "DistanceMatrix",
    "Edge",
    "EdgeKind",
    "EvalReport",
    "ModelNode",
    "RhoPolicy",
    "SyntheticSpec",
    "benchmark",
    "chart",
    "chart_components",
    "chart_with_trace",
    "compute_distance_matrix",
    "evaluate_charting",
    "export_dot",
    "export_gexf",
    "export_json",
    "generate",
    "knn",
    "make_split",
    "run_method",
    "validate_gexf",
]
