"""
Effectiveness metrics: AUROC/AUPRC, best F1 over a quantile grid, point-adjusted F1,
VUS-ROC/VUS-PR over a buffer-tolerance range, and seed aggregation
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import average_precision_score, roc_auc_score

from .errors import InvalidArgumentError, UndefinedMetricError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("f1", "pa_f1", "auroc", "auprc", "vus_roc", "vus_pr")
CURVES = ("roc", "pr")


# ==================== CORE MODELS ====================
@dataclass(frozen=True)
class ScoredSeries:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float).ravel()
        labels = np.asarray(self.labels).astype(int).ravel()
        if len(scores) != len(labels):
            raise InvalidArgumentError(f"{len(scores)} scores vs {len(labels)} labels")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def has_both_classes(self) -> bool:
        return bool(self.labels.any() and (1 - self.labels).any())


@dataclass
class MetricOptions:
    """Threshold grid and VUS buffer settings"""
    grid_low: float = 0.5
    grid_high: float = 0.999
    grid_size: int = 200
    vus_L: int = 50

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.grid_low, self.grid_high, self.grid_size)


@dataclass
class MetricReport:
    method: str
    dataset: str
    seed: int
    f1: float
    pa_f1: float
    auroc: float
    auprc: float
    vus_roc: float
    vus_pr: float
    best_threshold: float

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SeedAggregate:
    method: str
    dataset: str
    n_seeds: int
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)


# ==================== AUC ENGINE ====================
def _weighted_auc(scores: np.ndarray, weights: np.ndarray, curve: str) -> float:
    """AUC with soft labels: each point is a positive with weight w and a negative with weight 1 - w"""
    if curve not in CURVES:
        raise InvalidArgumentError(f"curve must be one of {CURVES}, got '{curve}'")
    pos_w = weights
    neg_w = 1.0 - weights
    if pos_w.sum() <= 0 or neg_w.sum() <= 0:
        raise UndefinedMetricError("AUC needs both classes")

    y = np.concatenate([np.ones(len(scores)), np.zeros(len(scores))])
    s = np.concatenate([scores, scores])
    w = np.concatenate([pos_w, neg_w])
    keep = w > 0
    y, s, w = y[keep], s[keep], w[keep]

    if curve == "roc":
        return float(roc_auc_score(y, s, sample_weight=w))
    return float(average_precision_score(y, s, sample_weight=w))


def auc(s: ScoredSeries, curve: str = "roc") -> float:
    """Area under the ROC (Mann-Whitney, ties 0.5) or precision-recall step curve"""
    if not s.has_both_classes():
        raise UndefinedMetricError("AUC is undefined for single-class labels")
    return _weighted_auc(s.scores, s.labels.astype(float), curve)


# ==================== THRESHOLD METRICS ====================
def label_segments(labels: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal runs of 1s as (start, end_exclusive)"""
    padded = np.concatenate([[0], np.asarray(labels).astype(int), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def _f1_rows(labels: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """F1 for each row of a (G x T) boolean prediction matrix; 0 when precision + recall = 0"""
    pos = labels.astype(bool)
    tp = (preds & pos).sum(axis=1).astype(float)
    fp = (preds & ~pos).sum(axis=1).astype(float)
    fn = (~preds & pos).sum(axis=1).astype(float)
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def _adjust_rows(labels: np.ndarray, preds: np.ndarray) -> np.ndarray:
    out = preds.copy()
    for a, b in label_segments(labels):
        hit = out[:, a:b].any(axis=1)
        out[:, a:b] |= hit[:, None]
    return out


def point_adjust(labels: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """Fill every label segment that contains at least one predicted positive"""
    labels = np.asarray(labels).astype(int)
    preds = np.asarray(preds).astype(bool)
    if len(labels) != len(preds):
        raise InvalidArgumentError(f"{len(labels)} labels vs {len(preds)} predictions")
    return _adjust_rows(labels, preds[None, :])[0].astype(int)


def _threshold_sweep(s: ScoredSeries, grid: Optional[Sequence[float]], adjust: bool) -> Tuple[float, float]:
    grid = MetricOptions().grid if grid is None else np.asarray(grid, dtype=float)
    if len(grid) == 0:
        raise InvalidArgumentError("Quantile grid is empty")
    if not s.has_both_classes():
        raise UndefinedMetricError("F1 sweep needs both classes")

    thresholds = np.quantile(s.scores, grid)
    preds = s.scores[None, :] >= thresholds[:, None]
    if adjust:
        preds = _adjust_rows(s.labels, preds)
    f1s = _f1_rows(s.labels, preds)

    best = f1s.max()
    tied = thresholds[f1s == best]
    return float(best), float(tied.min())


def best_f1(s: ScoredSeries, grid: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """Best point-wise F1 over score quantile thresholds; returns (f1, threshold)"""
    return _threshold_sweep(s, grid, adjust=False)


def pa_best_f1(s: ScoredSeries, grid: Optional[Sequence[float]] = None) -> float:
    """Best F1 after point adjustment of every thresholded prediction"""
    return _threshold_sweep(s, grid, adjust=True)[0]


# ==================== VUS ====================
def buffered_labels(labels: np.ndarray, buffer: int) -> np.ndarray:
    """Soft labels: 1 inside segments; outside, a linear ramp from 1 at distance 1 down to
    1/(buffer+1) at distance `buffer`; 0 further out. Overlapping ramps keep the larger weight.
    """
    labels = np.asarray(labels).astype(int)
    weights = labels.astype(float)
    if buffer <= 0:
        return weights
    n = len(labels)
    ramps = np.linspace(1.0, 1.0 / (buffer + 1), buffer)
    for a, b in label_segments(labels):
        for d, ramp in enumerate(ramps, start=1):
            left, right = a - d, b - 1 + d
            if left >= 0:
                weights[left] = max(weights[left], ramp)
            if right < n:
                weights[right] = max(weights[right], ramp)
    return weights


def vus(s: ScoredSeries, L: int = 50, curve: str = "roc") -> float:
    """Mean AUC over buffer tolerances 0..L

    A width whose buffer leaves no negative mass (every normal point at full weight) is skipped;
    width 0 is always defined once both classes are present.
    """
    if L < 0:
        raise InvalidArgumentError(f"L must be >= 0, got {L}")
    if not s.has_both_classes():
        raise UndefinedMetricError("VUS is undefined for single-class labels")
    values = []
    for ell in range(L + 1):
        weights = buffered_labels(s.labels, ell)
        if (1.0 - weights).sum() <= 0:
            logger.debug(f"VUS: buffer width {ell} leaves no negatives, skipped")
            continue
        values.append(_weighted_auc(s.scores, weights, curve))
    return float(np.mean(values))


# ==================== REPORTS ====================
def evaluate_scores(scores: np.ndarray, labels: np.ndarray, method: str, dataset: str, seed: int,
                    options: Optional[MetricOptions] = None) -> MetricReport:
    """All six effectiveness metrics for one (method, dataset, seed) cell"""
    options = options or MetricOptions()
    s = ScoredSeries(scores, labels)
    f1, threshold = best_f1(s, options.grid)
    return MetricReport(
        method=method,
        dataset=dataset,
        seed=seed,
        f1=f1,
        pa_f1=pa_best_f1(s, options.grid),
        auroc=auc(s, "roc"),
        auprc=auc(s, "pr"),
        vus_roc=vus(s, options.vus_L, "roc"),
        vus_pr=vus(s, options.vus_L, "pr"),
        best_threshold=threshold,
    )


def aggregate_seeds(reports: Sequence[MetricReport]) -> SeedAggregate:
    """Per-metric mean and (n-1)-denominator std across seeds; std is 0 for one seed"""
    if not reports:
        raise InvalidArgumentError("aggregate_seeds needs at least one report")
    keys = {(r.method, r.dataset) for r in reports}
    if len(keys) > 1:
        raise InvalidArgumentError(f"Reports mix method/dataset pairs: {sorted(keys)}")

    df = pd.DataFrame([r.to_dict() for r in reports])[list(METRIC_NAMES)]
    std = df.std(ddof=1).fillna(0.0) if len(df) > 1 else pd.Series(0.0, index=df.columns)
    return SeedAggregate(
        method=reports[0].method,
        dataset=reports[0].dataset,
        n_seeds=len(reports),
        mean={k: float(v) for k, v in df.mean().items()},
        std={k: float(v) for k, v in std.items()},
    )
