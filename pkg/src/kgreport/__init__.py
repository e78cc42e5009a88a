"""Desk-scale graph-guided chest report generation.

The pieces: a from-scratch autodiff tensor engine, the 14-node disease
graph, graph-distilled disease features fused with regional image features,
and a prompted causal decoder, plus metrics and a training harness.
"""

from .autodiff import Tape, Tensor, backward, grad_check
from .kgraph import build_chexpert_graph, load_graph_file, normalize_adjacency
from .model import ReportModel

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward", "grad_check",
    "build_chexpert_graph", "load_graph_file", "normalize_adjacency",
    "ReportModel", "__version__",
]
