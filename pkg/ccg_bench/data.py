"""
Dataset ingestion, train-statistics z-scoring, sliding windows and the MSDS protocol
Also generates the DAG-coupled synthetic desk suite used by tests and quick runs
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import (
    ChannelMismatchError,
    DatasetLoadError,
    EmptyJoinError,
    EmptySplitError,
    InvalidArgumentError,
    LabelAlignmentError,
    LabelLengthError,
    MissingFileError,
    MissingMetricError,
)

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
DEFAULT_MSDS_METRICS = ("cpu.user", "mem.used")
PathLike = Union[str, Path]


# ==================== CORE MODELS ====================
@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class TimeSeriesDataset:
    """A named multichannel series with train/test splits and per-timestep test labels"""
    name: str
    train: np.ndarray
    test: np.ndarray
    test_labels: np.ndarray
    norm: Optional[NormStats] = None
    channels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.train.ndim != 2 or self.test.ndim != 2:
            raise InvalidArgumentError(f"{self.name}: splits must be 2-D (time x channels)")
        if self.train.shape[1] != self.test.shape[1]:
            raise ChannelMismatchError(
                f"{self.name}: train has {self.train.shape[1]} channels, test has {self.test.shape[1]}"
            )
        if self.train.shape[1] < 1:
            raise ChannelMismatchError(f"{self.name}: no channels")
        if len(self.test_labels) != len(self.test):
            raise LabelLengthError(
                f"{self.name}: {len(self.test_labels)} labels for {len(self.test)} test timesteps"
            )
        if not np.all(np.isin(self.test_labels, (0, 1))):
            raise DatasetLoadError(f"{self.name}: labels must be 0/1")
        if not self.channels:
            object.__setattr__(self, "channels", tuple(f"ch{i}" for i in range(self.n_channels)))

    @property
    def n_channels(self) -> int:
        return int(self.train.shape[1])

    @property
    def anomaly_ratio(self) -> float:
        return float(np.mean(self.test_labels)) if len(self.test_labels) else 0.0


@dataclass(frozen=True)
class WindowBatch:
    """Sliding windows (B x T x C) plus the start timestep of each window in its source split"""
    windows: np.ndarray
    start_indices: np.ndarray
    stride: int = 1

    @property
    def batch_size(self) -> int:
        return int(self.windows.shape[0])

    @property
    def window(self) -> int:
        return int(self.windows.shape[1])

    @property
    def n_channels(self) -> int:
        return int(self.windows.shape[2])

    def take(self, idx: np.ndarray) -> "WindowBatch":
        return WindowBatch(self.windows[idx], self.start_indices[idx], self.stride)


# ==================== LOADING ====================
def _read_matrix(path: Path) -> Tuple[np.ndarray, Tuple[str, ...]]:
    if not path.exists():
        raise MissingFileError(f"Missing dataset file: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    return df.to_numpy(dtype=float), tuple(str(c) for c in df.columns)


def _read_labels(path: Path) -> np.ndarray:
    """First column of labels.csv, with or without a header row"""
    if not path.exists():
        raise MissingFileError(f"Missing dataset file: {path}")
    column = pd.to_numeric(pd.read_csv(path, header=None).iloc[:, 0], errors="coerce")
    if len(column) and pd.isna(column.iloc[0]):
        column = column.iloc[1:]
    if column.isna().any():
        raise DatasetLoadError(f"{path}: non-numeric label at row {int(column.isna().to_numpy().argmax())}")
    return column.to_numpy()


def load_dataset(root: PathLike, name: str) -> TimeSeriesDataset:
    """Read `<root>/<name>/{train,test,labels}.csv` into an un-normalised dataset"""
    base = Path(root) / name
    train, train_cols = _read_matrix(base / "train.csv")
    test, test_cols = _read_matrix(base / "test.csv")
    if train.shape[1] != test.shape[1]:
        raise ChannelMismatchError(f"{name}: train has {train.shape[1]} channels, test has {test.shape[1]}")

    labels = _read_labels(base / "labels.csv")
    if len(labels) != len(test):
        raise LabelLengthError(f"{name}: {len(labels)} labels for {len(test)} test timesteps")

    ds = TimeSeriesDataset(
        name=name,
        train=train,
        test=test,
        test_labels=labels.astype(int),
        channels=train_cols,
    )
    logger.info(f"Loaded {name}: C={ds.n_channels}, train={len(train)}, test={len(test)}, "
                f"anomaly ratio={ds.anomaly_ratio:.3f}")
    return ds


def write_dataset(ds: TimeSeriesDataset, root: PathLike) -> Path:
    """Write a dataset in the CSV interchange layout that load_dataset reads back"""
    base = Path(root) / ds.name
    base.mkdir(parents=True, exist_ok=True)
    cols = list(ds.channels)
    pd.DataFrame(ds.train, columns=cols).to_csv(base / "train.csv", index=False)
    pd.DataFrame(ds.test, columns=cols).to_csv(base / "test.csv", index=False)
    pd.DataFrame({"label": ds.test_labels.astype(int)}).to_csv(base / "labels.csv", index=False)
    return base


# ==================== NORMALISATION / WINDOWS ====================
def zscore(ds: TimeSeriesDataset) -> TimeSeriesDataset:
    """Standardise both splits with train mean/std (population std, floored)"""
    if len(ds.train) == 0:
        raise EmptySplitError(f"{ds.name}: train split is empty")
    mean = ds.train.mean(axis=0)
    std = np.maximum(ds.train.std(axis=0), STD_FLOOR)
    return replace(
        ds,
        train=(ds.train - mean) / std,
        test=(ds.test - mean) / std,
        norm=NormStats(mean=mean, std=std),
    )


def make_windows(split: np.ndarray, T: int, stride: int) -> WindowBatch:
    """All length-T windows at the given stride, fully inside the split"""
    if T < 1 or stride < 1:
        raise InvalidArgumentError(f"window and stride must be >= 1, got T={T}, stride={stride}")
    split = np.asarray(split, dtype=float)
    if len(split) < T:
        raise InvalidArgumentError(f"split of length {len(split)} is shorter than window {T}")
    view = np.lib.stride_tricks.sliding_window_view(split, (T, split.shape[1]))[::stride, 0]
    starts = np.arange(view.shape[0]) * stride
    return WindowBatch(windows=np.ascontiguousarray(view), start_indices=starts, stride=stride)


def pad_channels(x: np.ndarray, n_channels: int) -> np.ndarray:
    """Zero-pad or truncate the channel axis (last axis) to n_channels"""
    c = x.shape[-1]
    if c == n_channels:
        return x.copy()
    if c > n_channels:
        return x[..., :n_channels].copy()
    pad = [(0, 0)] * (x.ndim - 1) + [(0, n_channels - c)]
    return np.pad(x, pad)


# ==================== MSDS ====================
def msds_preprocess(
    host_files: Mapping[str, pd.DataFrame],
    label_file: pd.DataFrame,
    hosts: Sequence[str],
    metrics: Sequence[str] = DEFAULT_MSDS_METRICS,
    timestamp_col: str = "timestamp",
    name: str = "msds",
) -> TimeSeriesDataset:
    """Deduplicate, join, drop the warm-up 10%, split 50/50, z-score and merge labels"""
    merged: Optional[pd.DataFrame] = None
    for host in hosts:
        if host not in host_files:
            raise MissingMetricError(f"No table for host '{host}'")
        table = host_files[host]
        missing = [c for c in [timestamp_col, *metrics] if c not in table.columns]
        if missing:
            raise MissingMetricError(f"Host '{host}' is missing columns {missing}")

        frame = (
            table[[timestamp_col, *metrics]]
            .groupby(timestamp_col, as_index=False, sort=True)
            .mean()
            .rename(columns={m: f"{host}:{m}" for m in metrics})
        )
        merged = frame if merged is None else merged.merge(frame, on=timestamp_col, how="inner")

    if merged is None or merged.empty:
        raise EmptyJoinError("Inner join across hosts is empty")
    merged = merged.sort_values(timestamp_col).reset_index(drop=True)

    n_rows = len(merged)
    n_drop = n_rows // 10
    remaining = n_rows - n_drop
    n_train = remaining // 2
    if n_train == 0 or remaining - n_train == 0:
        raise EmptyJoinError(f"Only {n_rows} joined rows; nothing left after drop/split")

    columns = [f"{h}:{m}" for h in hosts for m in metrics]
    body = merged.iloc[n_drop:].reset_index(drop=True)
    train_df = body.iloc[:n_train]
    test_df = body.iloc[n_train:]

    labels = _align_msds_labels(label_file, test_df[timestamp_col].to_numpy(),
                                n_rows, n_drop + n_train, timestamp_col)

    ds = TimeSeriesDataset(
        name=name,
        train=train_df[columns].to_numpy(dtype=float),
        test=test_df[columns].to_numpy(dtype=float),
        test_labels=labels,
        channels=tuple(columns),
    )
    logger.info(f"MSDS: {n_rows} joined rows, dropped {n_drop}, train {len(ds.train)}, "
                f"test {len(ds.test)}, width {ds.n_channels}")
    return zscore(ds)


def _align_msds_labels(label_file: pd.DataFrame, test_timestamps: np.ndarray,
                       n_rows: int, test_offset: int, timestamp_col: str) -> np.ndarray:
    flag_cols = [c for c in label_file.columns if c != timestamp_col]
    if not flag_cols:
        raise LabelAlignmentError("Label table has no flag columns")

    if timestamp_col in label_file.columns:
        per_ts = label_file.groupby(timestamp_col)[flag_cols].max()
        missing = np.setdiff1d(test_timestamps, per_ts.index.to_numpy())
        if len(missing):
            raise LabelAlignmentError(f"Label table lacks {len(missing)} test timestamps, e.g. {missing[0]}")
        flags = per_ts.loc[test_timestamps].to_numpy()
    else:
        if len(label_file) != n_rows:
            raise LabelAlignmentError(f"Label table has {len(label_file)} rows, merged stream has {n_rows}")
        flags = label_file[flag_cols].to_numpy()[test_offset:]

    return (flags > 0).any(axis=1).astype(int)


def load_msds(root: PathLike, hosts: Sequence[str], metrics: Sequence[str] = DEFAULT_MSDS_METRICS) -> TimeSeriesDataset:
    """Run msds_preprocess on the raw layout `<root>/msds/raw/<host>.csv` + `labels.csv`"""
    raw = Path(root) / "msds" / "raw"
    tables: Dict[str, pd.DataFrame] = {}
    for host in hosts:
        path = raw / f"{host}.csv"
        if not path.exists():
            raise MissingFileError(f"Missing MSDS host file: {path}")
        tables[host] = pd.read_csv(path)
    labels_path = raw / "labels.csv"
    if not labels_path.exists():
        raise MissingFileError(f"Missing MSDS label file: {labels_path}")
    return msds_preprocess(tables, pd.read_csv(labels_path), hosts, metrics)


# ==================== SYNTHETIC SUITE ====================
SYNTH_PERIODS = (20, 25, 50)


def make_synthetic_suite(
    channels: int = 8,
    train_length: int = 1200,
    test_length: int = 1200,
    seed: int = 0,
    name: str = "synthetic",
) -> TimeSeriesDataset:
    """DAG-coupled periodic channels with spikes, level shifts and dependency breaks in test

    Channel j = own periodic source + AR(1) noise + weighted sum of its (already
    normalised) parents under a random strictly upper-triangular structure.
    """
    if channels < 2:
        raise InvalidArgumentError("synthetic suite needs at least 2 channels")
    rng = np.random.default_rng(seed)
    total = train_length + test_length
    t = np.arange(total)

    support = np.triu(rng.random((channels, channels)) < 0.5, k=1)
    weights = support * rng.uniform(0.5, 1.0, (channels, channels)) * rng.choice([-1.0, 1.0], (channels, channels))
    for j in range(1, channels):
        if not support[:, j].any():
            i = int(rng.integers(0, j))
            support[i, j] = True
            weights[i, j] = rng.uniform(0.5, 1.0)

    x = np.zeros((total, channels))
    for j in range(channels):
        period = SYNTH_PERIODS[j % len(SYNTH_PERIODS)]
        source = np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        noise = np.zeros(total)
        eps = rng.normal(0.0, 0.2, total)
        for k in range(1, total):
            noise[k] = 0.5 * noise[k - 1] + eps[k]
        col = source + noise + x[:, :j] @ weights[:j, j]
        x[:, j] = (col - col.mean()) / col.std()

    train = x[:train_length].copy()
    test = x[train_length:].copy()
    labels = np.zeros(test_length, dtype=int)

    slot = 100
    slots = np.arange(slot, test_length - slot, slot)
    kinds = ["spike", "level_shift", "dependency_break"]
    n_events = min(len(slots), 9)
    chosen = np.sort(rng.choice(slots, size=n_events, replace=False))
    children = [j for j in range(channels) if support[:, j].any()]

    for n, start in enumerate(chosen):
        kind = kinds[n % 3]
        if kind == "spike":
            pos = int(start + rng.integers(20, 60))
            ch = int(rng.integers(0, channels))
            test[pos, ch] += rng.choice([-1.0, 1.0]) * rng.uniform(4.0, 6.0)
            labels[pos] = 1
        elif kind == "level_shift":
            s = int(start + rng.integers(10, 30))
            length = int(rng.integers(20, 40))
            ch = int(rng.integers(0, channels))
            test[s:s + length, ch] += rng.choice([-1.0, 1.0]) * 3.0
            labels[s:s + length] = 1
        else:
            s = int(start + rng.integers(10, 30))
            length = int(rng.integers(30, 50))
            ch = int(rng.choice(children))
            lag = 7
            test[s:s + length, ch] = test[s - lag:s + length - lag, ch].copy()
            labels[s:s + length] = 1

    logger.debug(f"Synthetic suite seed={seed}: {n_events} events, ratio {labels.mean():.3f}")
    return TimeSeriesDataset(name=name, train=train, test=test, test_labels=labels)


def ensure_synthetic_suite(root: PathLike, name: str = "synthetic", seed: int = 0) -> Path:
    """Materialise the synthetic suite under root unless it is already there"""
    base = Path(root) / name
    if (base / "train.csv").exists() and (base / "test.csv").exists() and (base / "labels.csv").exists():
        return base
    logger.info(f"Writing synthetic suite '{name}' to {base}")
    return write_dataset(make_synthetic_suite(seed=seed, name=name), root)
