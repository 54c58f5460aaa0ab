"""
CCG-MSD: multi-view reconstruction model with gated fusion
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from ..errors import ViewConfigError
from .config import CcgConfig
from .views import ChannelView, PatchView, TemporalView

logger = logging.getLogger(__name__)

# parameters whose shape depends on the channel count, plus the input projection W_e
CHANNEL_DEPENDENT_PREFIXES = (
    "channel.embed.",
    "channel.adjacency.",
    "temporal.embed.",
    "temporal.head.",
    "gate.",
)


@dataclass
class ViewOutputs:
    reconstructions: Dict[str, torch.Tensor]
    fused: torch.Tensor
    gate: torch.Tensor
    patch_cue: Optional[torch.Tensor] = None
    assoc_cue: Optional[torch.Tensor] = None
    adjacency: Optional[torch.Tensor] = None
    channel_tokens: Optional[torch.Tensor] = None
    prior_gap: Optional[torch.Tensor] = None

    def cues(self) -> Dict[str, np.ndarray]:
        out = {}
        if self.patch_cue is not None:
            out["patch"] = self.patch_cue.detach().cpu().numpy()
        if self.assoc_cue is not None:
            out["assoc"] = self.assoc_cue.detach().cpu().numpy()
        return out


def gate_fuse(reconstructions: List[torch.Tensor], gate: Optional[nn.Linear]) -> Tuple[torch.Tensor, torch.Tensor]:
    """X_hat_t = sum_v g_tv * r_vt with g_t = softmax(W_g [r_1 || ... || r_n]_t)"""
    if not reconstructions:
        raise ViewConfigError("gate_fuse needs at least one active view")
    if len(reconstructions) == 1:
        r = reconstructions[0]
        return r, torch.ones(*r.shape[:2], 1, dtype=r.dtype, device=r.device)
    if gate is None:
        raise ViewConfigError(f"{len(reconstructions)} views need a gate")
    stacked = torch.stack(reconstructions, dim=-1)
    g = torch.softmax(gate(torch.cat(reconstructions, dim=-1)), dim=-1)
    return (stacked * g[:, :, None, :]).sum(dim=-1), g


class CcgMsd(nn.Module):
    """Channel-graph, patch and temporal views over (B x T x C) windows, fused per timestep"""

    def __init__(self, config: CcgConfig, n_channels: int, window: int, m_prior: Optional[np.ndarray] = None):
        super().__init__()
        self.config = config
        self.n_channels = n_channels
        self.window = window
        self.channel = ChannelView(config, n_channels, window, m_prior) if config.use_channel_view else None
        self.patch = PatchView(config, window) if config.use_patch_view else None
        self.temporal = TemporalView(config, n_channels, window) if config.use_temp_view else None
        n_views = len(config.active_views)
        self.gate = nn.Linear(n_views * n_channels, n_views) if n_views > 1 else None

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def flat_view(self) -> torch.Tensor:
        return parameters_to_vector(self.parameters()).detach().clone()

    def load_flat_view(self, vector: torch.Tensor) -> None:
        with torch.no_grad():
            vector_to_parameters(vector.to(next(self.parameters()).dtype), self.parameters())

    # ==================== VIEWS ====================
    def channel_view_forward(self, X: torch.Tensor):
        if self.channel is None:
            raise ViewConfigError("channel view is disabled")
        return self.channel(X)

    def patch_view_forward(self, X: torch.Tensor):
        if self.patch is None:
            raise ViewConfigError("patch view is disabled")
        return self.patch(X)

    def temp_view_forward(self, X: torch.Tensor):
        if self.temporal is None:
            raise ViewConfigError("temporal view is disabled")
        return self.temporal(X)

    def forward(self, X: torch.Tensor) -> ViewOutputs:
        recons: Dict[str, torch.Tensor] = {}
        patch_cue = assoc_cue = A = tokens = prior_gap = None
        if self.channel is not None:
            recons["channel"], tokens, A = self.channel_view_forward(X)
        if self.patch is not None:
            recons["patch"], patch_cue = self.patch_view_forward(X)
        if self.temporal is not None:
            recons["temporal"], assoc_cue, prior_gap = self.temp_view_forward(X)
        fused, g = gate_fuse(list(recons.values()), self.gate)
        return ViewOutputs(
            reconstructions=recons,
            fused=fused,
            gate=g,
            patch_cue=patch_cue,
            assoc_cue=assoc_cue,
            adjacency=A,
            channel_tokens=tokens,
            prior_gap=prior_gap,
        )


# ==================== INITIALISATION ====================
def _init_tensor(name: str, param: torch.Tensor, config: CcgConfig, gen: torch.Generator) -> torch.Tensor:
    shape = param.shape
    if name.endswith("adjacency.U") or name.endswith("adjacency.V"):
        return torch.empty(shape, dtype=param.dtype).normal_(0.0, 0.01, generator=gen)
    if name.endswith("adjacency.b"):
        return torch.full(shape, float(config.adj_bias_init), dtype=param.dtype)
    if name.endswith("log_sigma"):
        return torch.zeros(shape, dtype=param.dtype)
    if name.endswith(".pos"):
        return torch.empty(shape, dtype=param.dtype).normal_(0.0, 0.02, generator=gen)
    if "norm" in name:
        return torch.ones(shape, dtype=param.dtype) if name.endswith("weight") else torch.zeros(shape, dtype=param.dtype)
    if param.ndim == 2:
        bound = 1.0 / math.sqrt(shape[1])
        return torch.empty(shape, dtype=param.dtype).uniform_(-bound, bound, generator=gen)
    return torch.zeros(shape, dtype=param.dtype)


def reset_parameters(model: CcgMsd, seed: int, only: Optional[Tuple[str, ...]] = None) -> None:
    """Deterministic, thread-safe initialisation from a private generator, in parameter-name order"""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, param in sorted(model.named_parameters()):
            if only is not None and not name.startswith(only):
                continue
            param.copy_(_init_tensor(name, param, model.config, gen))


def build_model(config: CcgConfig, n_channels: int, window: int, seed: int,
                m_prior: Optional[np.ndarray] = None) -> CcgMsd:
    """Construct a float64 model and initialise it from the seed"""
    model = CcgMsd(config, n_channels, window, m_prior).double()
    reset_parameters(model, seed)
    logger.debug(f"Built CCG-MSD C={n_channels} T={window} views={config.active_views} params={model.n_params}")
    return model


def channel_dependent_names(model: CcgMsd) -> List[str]:
    return [n for n, _ in model.named_parameters() if n.startswith(CHANNEL_DEPENDENT_PREFIXES)]


def adapt_channels(source: CcgMsd, n_channels: int, seed: int) -> Tuple[CcgMsd, List[str]]:
    """Copy a model onto a new channel count

    Channel-independent parameters are copied from the source; the adjacency factors,
    gate, temporal embedding/head and the input projection are freshly initialised.
    Returns the new model and the names of the re-initialised parameters.
    """
    target = build_model(source.config, n_channels, source.window, seed)
    fresh = channel_dependent_names(target)
    source_params = dict(source.named_parameters())
    with torch.no_grad():
        for name, param in target.named_parameters():
            if name in fresh:
                continue
            param.copy_(source_params[name])
    return target, fresh
