"""
Test-time corruptions and the seed-matched robustness protocol
Absolute VUS-ROC is the primary number; retention is carried only as a diagnostic
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .data import TimeSeriesDataset
from .errors import InvalidArgumentError
from .metrics import MetricOptions, ScoredSeries, vus

logger = logging.getLogger(__name__)

FAMILIES = ("noise", "dropout", "shift")
SHIFT_MODES = ("rotate", "truncate")

DEFAULT_STRENGTHS: Dict[str, Tuple[float, ...]] = {
    "noise": (0.05, 0.10, 0.20),
    "dropout": (0.10, 0.25, 0.50),
    "shift": (2, 5, 10),
}

# (dataset, seed, test matrix) -> per-timestep scores
ScoreFn = Callable[[TimeSeriesDataset, int, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PerturbationSpec:
    family: str
    strength: float
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidArgumentError(f"Unknown perturbation family '{self.family}'")
        if self.family == "noise" and self.strength < 0:
            raise InvalidArgumentError(f"Noise sigma must be >= 0, got {self.strength}")
        if self.family == "dropout" and not 0.0 <= self.strength <= 1.0:
            raise InvalidArgumentError(f"Dropout fraction must be in [0, 1], got {self.strength}")
        if self.family == "shift" and (self.strength < 0 or int(self.strength) != self.strength):
            raise InvalidArgumentError(f"Shift must be a non-negative integer, got {self.strength}")


def dropout_count(p: float, n_channels: int) -> int:
    """Round-half-up of p*C, at least one channel when p > 0"""
    if p <= 0:
        return 0
    return min(n_channels, max(1, int(np.floor(p * n_channels + 0.5))))


def apply_perturbation(test_split: np.ndarray, spec: PerturbationSpec, shift_mode: str = "rotate") -> np.ndarray:
    """Return a corrupted copy of the (normalised) test split"""
    x = np.asarray(test_split, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise InvalidArgumentError("Perturbation needs a non-empty 2-D test split")
    rng = np.random.default_rng(spec.seed)

    if spec.family == "noise":
        if spec.strength == 0:
            return x.copy()
        return x + rng.normal(0.0, spec.strength, size=x.shape)

    if spec.family == "dropout":
        n_channels = x.shape[1]
        if spec.strength > 0 and n_channels == 0:
            raise InvalidArgumentError("Channel dropout on a split with no channels")
        out = x.copy()
        k = dropout_count(spec.strength, n_channels)
        if k:
            out[:, rng.choice(n_channels, size=k, replace=False)] = 0.0
        return out

    dt = int(spec.strength)
    if shift_mode not in SHIFT_MODES:
        raise InvalidArgumentError(f"shift_mode must be one of {SHIFT_MODES}")
    if dt == 0:
        return x.copy()
    if shift_mode == "rotate":
        return np.roll(x, dt, axis=0)
    # truncate: hold the first row over the vacated head
    out = np.empty_like(x)
    dt = min(dt, len(x))
    out[dt:] = x[:len(x) - dt]
    out[:dt] = x[0]
    return out


# ==================== ROBUSTNESS SUITE ====================
@dataclass
class RobustnessSummary:
    clean: Tuple[float, float]
    families: Dict[str, Tuple[float, float]]
    retention: Dict[str, float]
    records: List[Dict] = field(default_factory=list)

    @property
    def avg(self) -> float:
        return float(np.mean([m for m, _ in self.families.values()]))


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    series = pd.Series(values, dtype=float)
    std = float(series.std(ddof=1)) if len(series) > 1 else 0.0
    return float(series.mean()), std


def robustness_suite(
    detector_scores: ScoreFn,
    datasets: Sequence[TimeSeriesDataset],
    seeds: Sequence[int],
    strengths: Optional[Mapping[str, Sequence[float]]] = None,
    options: Optional[MetricOptions] = None,
    shift_mode: str = "rotate",
) -> RobustnessSummary:
    """Per seed, average VUS-ROC over datasets x strengths per family; then mean/std over seeds"""
    strengths = dict(strengths or DEFAULT_STRENGTHS)
    options = options or MetricOptions()
    if isinstance(datasets, TimeSeriesDataset):
        datasets = [datasets]

    records: List[Dict] = []
    for seed in seeds:
        for ds in datasets:
            clean = vus(ScoredSeries(detector_scores(ds, seed, ds.test), ds.test_labels), options.vus_L, "roc")
            records.append({"seed": seed, "dataset": ds.name, "family": "clean", "strength": 0.0, "vus_roc": clean})
            for family, levels in strengths.items():
                for level in levels:
                    spec = PerturbationSpec(family, level, seed)
                    perturbed = apply_perturbation(ds.test, spec, shift_mode)
                    value = vus(ScoredSeries(detector_scores(ds, seed, perturbed), ds.test_labels), options.vus_L, "roc")
                    records.append({"seed": seed, "dataset": ds.name, "family": family,
                                    "strength": float(level), "vus_roc": value})
            logger.debug(f"Robustness seed={seed} dataset={ds.name} clean={clean:.4f}")

    return summarize_robustness(records, list(strengths))


def summarize_robustness(records: Sequence[Dict], families: Sequence[str] = FAMILIES) -> RobustnessSummary:
    """Aggregate per-(seed, dataset, family, strength) VUS-ROC records into per-family mean/std across seeds"""
    if not records:
        raise InvalidArgumentError("no robustness records to summarise")
    per_seed = pd.DataFrame(list(records)).groupby(["family", "seed"])["vus_roc"].mean()
    clean_stats = _mean_std(per_seed.loc["clean"].tolist())
    stats = {f: _mean_std(per_seed.loc[f].tolist()) for f in families}
    retention = {
        f: (stats[f][0] / clean_stats[0] if clean_stats[0] != 0 else float("nan"))
        for f in families
    }
    return RobustnessSummary(clean=clean_stats, families=stats, retention=retention, records=list(records))
