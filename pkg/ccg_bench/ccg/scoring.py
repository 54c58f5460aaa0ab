"""
Composite training loss, per-window anomaly score and window-to-timeline projection
"""

import logging
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
import torch

from ..errors import CoverageGapError, InvalidArgumentError, ViewConfigError
from ..numerics import Spectrum, moving_average, topk_bins
from .config import PROJECTIONS, CcgConfig
from .graph import dag_penalty

logger = logging.getLogger(__name__)

MASK_WEIGHT = 2.0


# ==================== LOSS ====================
def frequency_loss(X: torch.Tensor, X_hat: torch.Tensor, k: int) -> torch.Tensor:
    """Mean |amplitude difference| on the top-k non-DC bins of X, per (window, channel)"""
    amp = torch.abs(torch.fft.rfft(X, dim=1))
    amp_hat = torch.abs(torch.fft.rfft(X_hat, dim=1))
    amp_np = amp.detach().cpu().numpy()
    B, n_bins, C = amp_np.shape
    rows, bins, chans = [], [], []
    for b in range(B):
        for c in range(C):
            for f in topk_bins(Spectrum(amplitudes=amp_np[b, :, c], series_length=X.shape[1]), k):
                rows.append(b)
                bins.append(f)
                chans.append(c)
    if not rows:
        return X.new_zeros(())
    idx = (torch.tensor(rows), torch.tensor(bins), torch.tensor(chans))
    return torch.abs(amp[idx] - amp_hat[idx]).mean()


def composite_loss(
    X: torch.Tensor,
    X_hat: torch.Tensor,
    A: Optional[torch.Tensor],
    mask: Optional[torch.Tensor],
    config: CcgConfig,
    lambda_dag: Optional[float] = None,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """L = L_rec + lambda_dag * h(A)^2 + lambda_freq * L_freq

    mask marks emphasised timesteps (B x T); they weigh 2x in the reconstruction MSE.
    The returned parts are the raw terms (rec, h, freq).
    """
    if X.shape != X_hat.shape:
        raise InvalidArgumentError(f"X {tuple(X.shape)} and X_hat {tuple(X_hat.shape)} differ")
    lam_dag = config.lambda_dag if lambda_dag is None else lambda_dag

    weights = torch.ones(X.shape[:2], dtype=X.dtype, device=X.device)
    if mask is not None:
        if mask.shape != X.shape[:2]:
            raise InvalidArgumentError(f"mask shape {tuple(mask.shape)} does not match {tuple(X.shape[:2])}")
        weights = weights + (MASK_WEIGHT - 1.0) * mask.to(X.dtype)
    sq = (X - X_hat) ** 2
    rec = (sq * weights[:, :, None]).sum() / (weights.sum() * X.shape[2])

    h = dag_penalty(A) if A is not None else X.new_zeros(())
    freq = frequency_loss(X, X_hat, config.k_periods) if config.lambda_freq > 0 else X.new_zeros(())

    total = rec + lam_dag * h ** 2 + config.lambda_freq * freq
    parts = {"rec": float(rec.detach()), "dag": float(h.detach()), "freq": float(freq.detach())}
    return total, parts


# ==================== SCORE ====================
def anomaly_score(X: np.ndarray, X_hat: np.ndarray, cues: Mapping[str, np.ndarray], config: CcgConfig) -> np.ndarray:
    """s_t = alpha * ||x_t - x_hat_t||^2 + delta_p * c_patch_t + delta_t * c_assoc_t, per window (B x T)"""
    X = np.asarray(X, dtype=float)
    X_hat = np.asarray(X_hat, dtype=float)
    if X.shape != X_hat.shape:
        raise InvalidArgumentError(f"X {X.shape} and X_hat {X_hat.shape} differ")

    expected = set()
    if config.use_patch_view:
        expected.add("patch")
    if config.use_temp_view:
        expected.add("assoc")
    supplied = set(cues)
    if supplied - expected:
        raise ViewConfigError(f"Cues supplied for inactive views: {sorted(supplied - expected)}")
    if expected - supplied:
        raise ViewConfigError(f"Missing cues for active views: {sorted(expected - supplied)}")

    score = config.alpha * ((X - X_hat) ** 2).sum(axis=-1)
    if "patch" in cues:
        score = score + config.effective_delta_p * np.asarray(cues["patch"])
    if "assoc" in cues:
        score = score + config.effective_delta_t * np.asarray(cues["assoc"])
    return score


# ==================== PROJECTION ====================
def project_scores(window_scores: np.ndarray, start_indices: np.ndarray, T_test: int,
                   mode: str = "mean", smooth_window: int = 51) -> np.ndarray:
    """Map overlapping per-window scores (B x T) onto the test timeline"""
    if mode not in PROJECTIONS:
        raise InvalidArgumentError(f"mode must be one of {PROJECTIONS}, got '{mode}'")
    window_scores = np.asarray(window_scores, dtype=float)
    starts = np.asarray(start_indices, dtype=int)
    B, T = window_scores.shape
    if len(starts) != B:
        raise InvalidArgumentError(f"{len(starts)} start indices for {B} windows")
    positions = starts[:, None] + np.arange(T)[None, :]
    if positions.max(initial=-1) >= T_test or positions.min(initial=0) < 0:
        raise InvalidArgumentError("window positions fall outside the test split")

    if mode == "last":
        timeline = np.full(T_test, np.nan)
        timeline[starts + T - 1] = window_scores[:, -1]
        first = np.flatnonzero(starts == 0)
        if len(first):
            head = slice(0, T - 1)
            timeline[head] = np.where(np.isnan(timeline[head]), window_scores[first[0], : T - 1], timeline[head])
        gaps = np.flatnonzero(np.isnan(timeline))
        if len(gaps):
            raise CoverageGapError(f"{len(gaps)} timesteps uncovered in 'last' projection, first at {gaps[0]}")
        return timeline

    counts = np.zeros(T_test)
    np.add.at(counts, positions.ravel(), 1)
    gaps = np.flatnonzero(counts == 0)
    if len(gaps):
        raise CoverageGapError(f"{len(gaps)} timesteps uncovered, first at {gaps[0]}")

    if mode == "mean":
        sums = np.zeros(T_test)
        np.add.at(sums, positions.ravel(), window_scores.ravel())
        return sums / counts

    peaks = np.full(T_test, -np.inf)
    np.maximum.at(peaks, positions.ravel(), window_scores.ravel())
    return moving_average(peaks, smooth_window)
