"""CCG-MSD detector family and the Linear-AR baseline"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATIONS, PRESETS, CcgConfig, apply_ablation, preset_for
from .graph import AdjacencyParams, adjacency, dag_penalty
from .linear_ar import LinearAR, linear_ar
from .model import CcgMsd, ViewOutputs, adapt_channels, build_model, gate_fuse, reset_parameters
from .scoring import anomaly_score, composite_loss, project_scores

__all__ = [
    "ABLATIONS",
    "PRESETS",
    "AdjacencyParams",
    "CcgConfig",
    "CcgMsd",
    "LinearAR",
    "ViewOutputs",
    "adapt_channels",
    "adjacency",
    "anomaly_score",
    "apply_ablation",
    "build_model",
    "composite_loss",
    "dag_penalty",
    "gate_fuse",
    "linear_ar",
    "load_checkpoint",
    "preset_for",
    "project_scores",
    "reset_parameters",
    "save_checkpoint",
]
