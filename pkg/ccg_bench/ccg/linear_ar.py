"""
Linear-AR baseline: per-channel autoregression fitted by least squares, scored by absolute residual
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import ConfigurationError, InvalidArgumentError

logger = logging.getLogger(__name__)

RIDGE_EPS = 1e-6
MAX_COND = 1e12


def _lagged(series: np.ndarray, order: int) -> np.ndarray:
    """(n - order) x order design matrix; column k holds lag k + 1"""
    view = np.lib.stride_tricks.sliding_window_view(series, order + 1)
    return view[:, :order][:, ::-1]


def fit_channel(series: np.ndarray, order: int) -> np.ndarray:
    """OLS AR(order) coefficients without intercept; ridge fallback when the normal equations are degenerate"""
    Z = _lagged(series, order)
    y = series[order:]
    G = Z.T @ Z
    rhs = Z.T @ y
    try:
        if np.linalg.cond(G) > MAX_COND:
            raise np.linalg.LinAlgError("ill-conditioned normal equations")
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.solve(G + RIDGE_EPS * np.eye(order), rhs)


@dataclass
class LinearAR:
    coefficients: np.ndarray  # C x p, column k = lag k + 1
    context: Optional[np.ndarray] = None

    @property
    def order(self) -> int:
        return int(self.coefficients.shape[1])

    @property
    def n_channels(self) -> int:
        return int(self.coefficients.shape[0])

    @property
    def n_params(self) -> int:
        return int(self.coefficients.size)

    @classmethod
    def fit(cls, train: np.ndarray, order: int = 8) -> "LinearAR":
        train = np.asarray(train, dtype=float)
        if order < 1:
            raise InvalidArgumentError(f"order must be >= 1, got {order}")
        if len(train) <= order:
            raise InvalidArgumentError(f"train length {len(train)} must exceed order {order}")
        coefs = np.stack([fit_channel(train[:, c], order) for c in range(train.shape[1])])
        return cls(coefficients=coefs, context=train[-order:].copy())

    def for_channels(self, n_channels: int) -> "LinearAR":
        """Share the mean coefficient vector across a different channel count"""
        if n_channels == self.n_channels:
            return LinearAR(self.coefficients.copy(), self.context)
        shared = np.tile(self.coefficients.mean(axis=0), (n_channels, 1))
        return LinearAR(shared, None)

    def score(self, test: np.ndarray, context: Optional[np.ndarray] = None) -> np.ndarray:
        """Mean over channels of |x_t - prediction_t|; the first p steps use the context tail"""
        test = np.asarray(test, dtype=float)
        context = self.context if context is None else np.asarray(context, dtype=float)
        if test.shape[1] != self.n_channels:
            raise InvalidArgumentError(f"test has {test.shape[1]} channels, model has {self.n_channels}")
        p = self.order
        if context is None or len(context) < p:
            raise InvalidArgumentError(f"scoring needs at least {p} context rows")
        full = np.vstack([context[-p:], test])
        lags = np.lib.stride_tricks.sliding_window_view(full, p, axis=0)[:-1]  # n x C x p, oldest first
        pred = np.einsum("ncp,cp->nc", lags[:, :, ::-1], self.coefficients)
        return np.abs(test - pred).mean(axis=1)

    # ==================== PERSISTENCE ====================
    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, coefficients=self.coefficients,
                 context=self.context if self.context is not None else np.zeros((0, self.n_channels)))
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LinearAR":
        try:
            with np.load(path) as data:
                context = data["context"]
                return cls(data["coefficients"], context if len(context) else None)
        except KeyError as e:
            raise ConfigurationError(f"Malformed Linear-AR checkpoint {path}: {e}") from e


def linear_ar(train: np.ndarray, test: np.ndarray, order: int = 8) -> np.ndarray:
    """Fit on train, score test with train-tail context"""
    return LinearAR.fit(train, order).score(test)
