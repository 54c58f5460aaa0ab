"""
Detector adapters used by the orchestrator: CCG-MSD, Linear-AR and precomputed external scores
Trainable detectors cache their fitted state as checkpoints keyed by (method, dataset, seed, config)
"""

import hashlib
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd
import torch

from ..ccg.checkpoint import load_checkpoint, save_checkpoint
from ..ccg.config import CcgConfig
from ..ccg.linear_ar import LinearAR
from ..ccg.model import CcgMsd, build_model
from ..ccg.scoring import anomaly_score, composite_loss, project_scores
from ..data import TimeSeriesDataset, make_windows
from ..errors import DatasetLoadError, LabelLengthError, MissingFileError
from ..training import TrainConfig, add_prior_term, build_optimizer, clip_gradients, train
from .config import canonical_json

logger = logging.getLogger(__name__)

SCORE_CHUNK = 256


def checkpoint_key(**parts: Any) -> str:
    return hashlib.sha256(canonical_json(parts).encode()).hexdigest()[:16]


# ==================== CCG-MSD ====================
class CcgDetector:
    trainable = True

    def __init__(self, method: str, config: CcgConfig, train_cfg: TrainConfig, window: int,
                 train_stride: int, checkpoint_dir: Path):
        self.method = method
        self.config = config
        self.train_cfg = train_cfg
        self.window = window
        self.train_stride = train_stride
        self.checkpoint_dir = Path(checkpoint_dir)
        self.model: Optional[CcgMsd] = None
        self.trace: Optional[pd.DataFrame] = None

    def key(self, dataset: str) -> str:
        return checkpoint_key(method=self.method, dataset=dataset, seed=self.train_cfg.seed,
                              config=self.config.to_dict(), train=self.train_cfg.to_dict(),
                              window=self.window, stride=self.train_stride)

    def fit(self, ds: TimeSeriesDataset) -> bool:
        """Train on the train split unless a matching checkpoint exists; returns True if trained"""
        path = self.checkpoint_dir / f"{self.key(ds.name)}.npz"
        if path.exists():
            self.model = load_checkpoint(path)
            logger.info(f"{self.method}/{ds.name}/seed{self.train_cfg.seed}: reusing checkpoint {path.name}")
            return False

        model = build_model(self.config, ds.n_channels, self.window, self.train_cfg.seed)
        windows = make_windows(ds.train, self.window, self.train_stride)
        logger.info(f"{self.method}/{ds.name}/seed{self.train_cfg.seed}: training on {windows.batch_size} windows, "
                    f"{model.n_params} parameters")
        result = train(model, windows, self.train_cfg, log_every=0)
        save_checkpoint(model, path)
        self.model = model
        self.trace = result.to_frame()
        return True

    @property
    def n_params(self) -> int:
        return self.model.n_params if self.model is not None else 0

    def window_scores(self, test: np.ndarray, model: Optional[CcgMsd] = None):
        model = model or self.model
        batch = make_windows(test, self.window, 1)
        chunks = []
        model.eval()
        with torch.no_grad():
            for i in range(0, batch.batch_size, SCORE_CHUNK):
                X = torch.from_numpy(batch.windows[i:i + SCORE_CHUNK]).to(torch.float64)
                out = model(X)
                chunks.append(anomaly_score(X.numpy(), out.fused.numpy(), out.cues(), model.config))
        return np.concatenate(chunks), batch.start_indices

    def score(self, test: np.ndarray, model: Optional[CcgMsd] = None) -> np.ndarray:
        scores, starts = self.window_scores(test, model)
        return project_scores(scores, starts, len(test), self.config.score_projection, self.config.smooth_window)

    # ==================== EFFICIENCY ====================
    def step_functions(self, n_channels: int, seed: int = 0):
        """(train_step, infer_step) closures over a freshly built model"""
        model = build_model(self.config, n_channels, self.window, seed)
        optimizer = build_optimizer(model.parameters(), self.train_cfg)
        params = list(model.parameters())
        self.model = model

        def train_step(batch: np.ndarray):
            model.train()
            X = torch.from_numpy(batch)
            out = model(X)
            total, parts = composite_loss(X, out.fused, out.adjacency, None, model.config)
            total, _ = add_prior_term(total, parts, out.prior_gap, model.config.lambda_prior)
            optimizer.zero_grad()
            total.backward()
            clip_gradients(params, self.train_cfg.clip_norm)
            optimizer.step()

        def infer_step(batch: np.ndarray):
            model.eval()
            with torch.no_grad():
                X = torch.from_numpy(batch)
                out = model(X)
                anomaly_score(batch, out.fused.numpy(), out.cues(), model.config)

        return train_step, infer_step


# ==================== LINEAR-AR ====================
class LinearArDetector:
    trainable = True

    def __init__(self, method: str, order: int, checkpoint_dir: Path):
        self.method = method
        self.order = order
        self.checkpoint_dir = Path(checkpoint_dir)
        self.model: Optional[LinearAR] = None
        self.trace = None

    def key(self, dataset: str) -> str:
        return checkpoint_key(method=self.method, dataset=dataset, order=self.order)

    def fit(self, ds: TimeSeriesDataset) -> bool:
        path = self.checkpoint_dir / f"{self.key(ds.name)}.npz"
        if path.exists():
            self.model = LinearAR.load(path)
            return False
        self.model = LinearAR.fit(ds.train, self.order)
        self.model.save(path)
        return True

    @property
    def n_params(self) -> int:
        return self.model.n_params if self.model is not None else 0

    def score(self, test: np.ndarray, context: Optional[np.ndarray] = None) -> np.ndarray:
        return self.model.score(test, context)

    def step_functions(self, n_channels: int, seed: int = 0):
        holder: Dict[str, LinearAR] = {}

        def train_step(batch: np.ndarray):
            holder["model"] = LinearAR.fit(batch.reshape(-1, batch.shape[2]), self.order)
            self.model = holder["model"]

        def infer_step(batch: np.ndarray):
            model = holder.get("model") or LinearAR.fit(batch[0], self.order)
            for window in batch:
                model.score(window[self.order:], window[: self.order])

        return train_step, infer_step


# ==================== EXTERNAL SCORES ====================
class ExternalScoreDetector:
    """Scores produced elsewhere, read from `<scores_root>/<method>/<dataset>.csv`"""
    trainable = False

    def __init__(self, method: str, scores_root: Path):
        self.method = method
        self.scores_root = Path(scores_root)
        self.trace = None
        self._scores: Optional[np.ndarray] = None

    def key(self, dataset: str) -> str:
        return checkpoint_key(method=self.method, dataset=dataset, external=True)

    def fit(self, ds: TimeSeriesDataset) -> bool:
        path = self.scores_root / self.method / f"{ds.name}.csv"
        if not path.exists():
            raise MissingFileError(f"No external scores at {path}")
        frame = pd.read_csv(path, float_precision="round_trip")
        if "score" not in frame.columns:
            raise DatasetLoadError(f"{path} has no 'score' column")
        scores = frame["score"].to_numpy(dtype=float)
        if len(scores) != len(ds.test):
            raise LabelLengthError(f"{path}: {len(scores)} scores for {len(ds.test)} test timesteps")
        self._scores = scores
        return False

    @property
    def n_params(self) -> int:
        return 0

    def score(self, test: np.ndarray) -> np.ndarray:
        return self._scores.copy()
