"""
Numerical kernels shared by the data, metrics and model modules
Matrix-exponential trace, real FFT amplitude spectra, period selection and smoothing
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

TAYLOR_TOL = 1e-12


# ==================== SPECTRUM ====================
@dataclass(frozen=True)
class Spectrum:
    """Amplitude spectrum of a real series (unnormalised forward transform, bin 0 = DC)"""
    amplitudes: np.ndarray
    series_length: int

    @property
    def n_bins(self) -> int:
        return len(self.amplitudes)

    def weighted_power(self) -> float:
        """Sum of squared amplitudes with the real-FFT bin weighting, divided by length

        Non-DC bins count twice except the Nyquist bin of an even-length series.
        """
        power = self.amplitudes ** 2
        weights = np.full(self.n_bins, 2.0)
        weights[0] = 1.0
        if self.series_length % 2 == 0:
            weights[-1] = 1.0
        return float(np.sum(weights * power) / self.series_length)


# ==================== MATRIX EXPONENTIAL ====================
def _expm_taylor(M: np.ndarray) -> np.ndarray:
    """exp(M) by scaling and squaring around a truncated Taylor series"""
    norm = np.linalg.norm(M, 1)
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    A = M / (2.0 ** squarings)

    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 100):
        term = term @ A / k
        result = result + term
        if np.max(np.abs(term)) <= TAYLOR_TOL * np.max(np.abs(result)):
            break

    for _ in range(squarings):
        result = result @ result
    return result


def matexp_trace(M: np.ndarray, want_gradient: bool = False) -> Tuple[float, Optional[np.ndarray]]:
    """tr(exp(M)) and, optionally, its gradient exp(M)^T"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidArgumentError(f"matexp_trace needs a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("matexp_trace input contains non-finite entries")

    E = _expm_taylor(M)
    trace = float(np.trace(E))
    return trace, (E.T.copy() if want_gradient else None)


# ==================== FFT ====================
def rfft_amplitudes(x: np.ndarray) -> Spectrum:
    """Magnitudes of the real-input DFT of a 1-D series"""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < 2:
        raise InvalidArgumentError(f"rfft_amplitudes needs a 1-D series of length >= 2, got shape {x.shape}")
    return Spectrum(amplitudes=np.abs(np.fft.rfft(x)), series_length=len(x))


def topk_bins(s: Spectrum, k: int) -> List[int]:
    """Non-DC frequency bins with the k largest amplitudes, ties toward the lower bin"""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")

    amps = s.amplitudes[1:]
    if len(amps) == 0:
        return []
    floor = 1e-10 * float(np.max(s.amplitudes))
    freqs = np.arange(1, len(amps) + 1)
    order = np.lexsort((freqs, -amps))
    chosen = [int(freqs[i]) for i in order if amps[i] > floor]
    return chosen[:k]


def topk_periods(s: Spectrum, k: int) -> List[int]:
    """Period lengths (length // f) of the k strongest non-DC bins, by descending amplitude"""
    return [s.series_length // f for f in topk_bins(s, k)]


# ==================== SMOOTHING ====================
def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered box mean; the window shrinks at the edges so output length = input length"""
    if window < 1 or window % 2 == 0:
        raise InvalidArgumentError(f"moving_average window must be odd and >= 1, got {window}")
    x = np.asarray(x, dtype=float)
    if window == 1:
        return x.copy()
    return pd.Series(x).rolling(window=window, center=True, min_periods=1).mean().to_numpy()
