"""
The three reconstruction views: channel graph (+ spectral branch), patch attention, temporal association
Each view maps a batch of windows (B x T x C) to a reconstruction of the same shape
"""

import logging
import math
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from ..errors import InvalidArgumentError
from ..numerics import Spectrum, topk_bins
from .config import CcgConfig
from .graph import AdjacencyParams, AttentionBlock

logger = logging.getLogger(__name__)

KL_EPS = 1e-8


# ==================== SPECTRAL BRANCH ====================
@lru_cache(maxsize=256)
def _cycle_pooling(T: int, period: int) -> np.ndarray:
    """T x T operator replacing every step by the mean of its cycle (last cycle may be short)"""
    P = np.zeros((T, T))
    for start in range(0, T, period):
        end = min(start + period, T)
        P[start:end, start:end] = 1.0 / (end - start)
    return P


def period_pooling(X: np.ndarray, k: int) -> np.ndarray:
    """Per window: amplitude-softmax-weighted mix of the cycle-mean operators of its top-k periods

    X is (B x T x C); returns (B x T x T). A window with no non-DC energy gets the zero operator.
    """
    B, T, _ = X.shape
    amps = np.abs(np.fft.rfft(X, axis=1)).mean(axis=2)
    ops = np.zeros((B, T, T))
    for b in range(B):
        bins = topk_bins(Spectrum(amplitudes=amps[b], series_length=T), k)
        if not bins:
            continue
        a = amps[b, bins]
        w = np.exp(a - a.max())
        w /= w.sum()
        for weight, f in zip(w, bins):
            ops[b] += weight * _cycle_pooling(T, T // f)
    return ops


class SpectralBranch(nn.Module):
    """Top-k FFT periods, cycle-mean pooling per period, shared T -> d map per channel"""

    def __init__(self, window: int, d_model: int, k_periods: int):
        super().__init__()
        self.k = k_periods
        self.proj = nn.Linear(window, d_model)

    def forward(self, X: torch.Tensor) -> torch.Tensor:
        ops = torch.from_numpy(period_pooling(X.detach().cpu().numpy(), self.k)).to(X)
        pooled = torch.einsum("btu,buc->bct", ops, X)
        return self.proj(pooled)


# ==================== CHANNEL VIEW ====================
class ChannelView(nn.Module):
    """Channels as tokens; attention between channels is biased by the learnt adjacency"""

    def __init__(self, config: CcgConfig, n_channels: int, window: int, m_prior: Optional[np.ndarray] = None):
        super().__init__()
        d = config.d_model
        self.embed = nn.Linear(window, d)
        self.adjacency = AdjacencyParams(n_channels, config.rank, config.adj_bias_init, m_prior)
        self.spectral = SpectralBranch(window, d, config.k_periods) if config.use_spectral else None
        self.layers = nn.ModuleList([AttentionBlock(d, config.heads, config.ffn_mult) for _ in range(config.layers)])
        self.head = nn.Linear(d, window)

    def forward(self, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        A = self.adjacency()
        tokens = self.embed(X.transpose(1, 2))
        if self.spectral is not None:
            tokens = tokens + self.spectral(X)
        m_prior = self.adjacency.m_prior.to(A.dtype)
        for layer in self.layers:
            tokens, _ = layer(tokens, A, m_prior)
        return self.head(tokens).transpose(1, 2), tokens, A


# ==================== PATCH VIEW ====================
def patch_coverage(window: int, patch_len: int, patch_stride: int) -> np.ndarray:
    """Row-normalised T x N map from timesteps to the patches covering them

    Timesteps past the last patch are assigned to the last patch.
    """
    n = (window - patch_len) // patch_stride + 1
    cover = np.zeros((window, n))
    for p in range(n):
        start = p * patch_stride
        cover[start:start + patch_len, p] = 1.0
    cover[cover.sum(axis=1) == 0, n - 1] = 1.0
    return cover / cover.sum(axis=1, keepdims=True)


class PatchView(nn.Module):
    """Each channel is patched independently; attention runs over the patches of one channel"""

    def __init__(self, config: CcgConfig, window: int):
        super().__init__()
        if window < config.patch_len:
            raise InvalidArgumentError(f"window {window} is shorter than patch length {config.patch_len}")
        self.patch_len = config.patch_len
        self.patch_stride = config.patch_stride
        self.n_patches = (window - config.patch_len) // config.patch_stride + 1
        d_p = max(1, config.d_model // 2)
        heads = config.heads if d_p % config.heads == 0 else 1
        self.embed = nn.Linear(config.patch_len, d_p)
        self.pos = nn.Parameter(torch.zeros(self.n_patches, d_p))
        self.layers = nn.ModuleList([AttentionBlock(d_p, heads, config.ffn_mult) for _ in range(config.layers)])
        self.head = nn.Linear(self.n_patches * d_p, window)
        self.register_buffer("coverage", torch.from_numpy(
            patch_coverage(window, config.patch_len, config.patch_stride)))

    def forward(self, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        B, T, C = X.shape
        series = X.transpose(1, 2).reshape(B * C, T)
        patches = series.unfold(1, self.patch_len, self.patch_stride)
        tokens = self.embed(patches) + self.pos
        attn = None
        for layer in self.layers:
            tokens, attn = layer(tokens)
        recon = self.head(tokens.reshape(B * C, -1)).view(B, C, T).transpose(1, 2)
        diag = torch.diagonal(attn, dim1=-2, dim2=-1).mean(dim=1).view(B, C, -1).mean(dim=1)
        cue = (1.0 - diag) @ self.coverage.to(diag.dtype).T
        return recon, cue


# ==================== TEMPORAL VIEW ====================
def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div)[:, : d_model // 2]
    return pe


def gaussian_prior(log_sigma: torch.Tensor) -> torch.Tensor:
    """Row-normalised Gaussian kernel in |i - j| with one sigma per (head, query position)"""
    H, T = log_sigma.shape
    idx = torch.arange(T, dtype=log_sigma.dtype, device=log_sigma.device)
    dist2 = (idx[:, None] - idx[None, :]) ** 2
    sigma = torch.exp(log_sigma)[:, :, None]
    kernel = torch.exp(-dist2[None] / (2 * sigma ** 2))
    return kernel / kernel.sum(dim=-1, keepdim=True)


def association_discrepancy(P: torch.Tensor, S: torch.Tensor) -> torch.Tensor:
    """KL(P||S) + KL(S||P) along the last axis, natural log"""
    kl_ps = (P * torch.log((P + KL_EPS) / (S + KL_EPS))).sum(dim=-1)
    kl_sp = (S * torch.log((S + KL_EPS) / (P + KL_EPS))).sum(dim=-1)
    return kl_ps + kl_sp


class TemporalView(nn.Module):
    """Timesteps as tokens; each layer's attention is compared to a distance prior

    forward returns (reconstruction, cue, prior_gap). The cue never enters the loss, so
    log_sigma only receives gradient through prior_gap, the discrepancy against the detached
    series association, which training adds when lambda_prior > 0. With the default of 0
    the prior widths stay at their initial value.
    """

    def __init__(self, config: CcgConfig, n_channels: int, window: int):
        super().__init__()
        d = config.d_model
        self.embed = nn.Linear(n_channels, d)
        self.register_buffer("position", torch.from_numpy(sinusoidal_encoding(window, d)))
        self.layers = nn.ModuleList([AttentionBlock(d, config.heads, config.ffn_mult) for _ in range(config.layers)])
        self.log_sigma = nn.Parameter(torch.zeros(config.heads, window))
        self.head = nn.Linear(d, n_channels)

    def forward(self, X: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        tokens = self.embed(X) + self.position.to(X.dtype)
        prior = gaussian_prior(self.log_sigma).to(X.dtype)
        cues: List[torch.Tensor] = []
        gaps: List[torch.Tensor] = []
        for layer in self.layers:
            tokens, series = layer(tokens)
            cues.append(association_discrepancy(prior[None], series))
            gaps.append(association_discrepancy(prior[None], series.detach()).mean())
        cue = torch.stack(cues, dim=0).mean(dim=(0, 2))
        return self.head(tokens), cue, torch.stack(gaps).mean()
