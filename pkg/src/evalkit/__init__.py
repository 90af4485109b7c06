"""Evaluation protocols: trajectory alignment, pose errors, depth and reconstruction metrics."""

from .depth import DepthMetrics, align_depth, depth_metrics
from .recon import ChamferMetrics, chamfer_acc_comp, select_views, sparse_view_reconstruction
from .report import SequencePredictions, aggregate_metrics, build_report, evaluate_sequence, write_report
from .trajectory import Sim3, Trajectory, alignment_residual, ate, rpe, umeyama_sim3

__all__ = [
    "ChamferMetrics",
    "DepthMetrics",
    "SequencePredictions",
    "Sim3",
    "Trajectory",
    "aggregate_metrics",
    "align_depth",
    "alignment_residual",
    "ate",
    "build_report",
    "chamfer_acc_comp",
    "depth_metrics",
    "evaluate_sequence",
    "rpe",
    "select_views",
    "sparse_view_reconstruction",
    "umeyama_sim3",
    "write_report",
]
