"""
Training loop for CCG-MSD: AdamW, warmup + cosine schedule, gradient clipping,
DAG-penalty ramp, outlier injection and the finite-difference gradient check
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from .ccg.model import CcgMsd
from .ccg.scoring import composite_loss
from .data import WindowBatch
from .errors import InvalidArgumentError, NonFiniteLossError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["step", "total", "rec", "dag", "freq", "prior", "lr", "lambda_dag"]
SPIKE_SCALE = 6.0
LAMBDA_RAMP_EPOCHS = 2.0


@dataclass
class TrainConfig:
    lr_peak: float = 3e-4
    weight_decay: float = 1e-4
    warmup_steps: int = 500
    clip_norm: float = 1.0
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    inject_rate: float = 0.0
    mask_rate: float = 0.15
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_peak <= 0 or self.batch_size < 1 or self.epochs < 1 or self.warmup_steps < 0:
            raise InvalidArgumentError("lr_peak, batch_size and epochs must be positive, warmup_steps >= 0")
        if not 0.0 <= self.inject_rate <= 1.0 or not 0.0 <= self.mask_rate <= 1.0:
            raise InvalidArgumentError("inject_rate and mask_rate must lie in [0, 1]")
        if self.clip_norm <= 0:
            raise InvalidArgumentError("clip_norm must be positive (use inf to disable)")
        self.betas = tuple(self.betas)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: nn.Module
    trace: List[Dict[str, float]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.trace, columns=TRACE_COLUMNS)


# ==================== SCHEDULES ====================
def schedules(step: int, total_steps: int, epoch: float, cfg: TrainConfig,
              lambda_dag: float = 0.05) -> Tuple[float, float]:
    """(learning rate, effective DAG weight) at a step; epoch is fractional progress"""
    if step < 0 or step > total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    warmup = cfg.warmup_steps

    if warmup > 0 and step < warmup:
        lr = cfg.lr_peak * step / warmup
    elif total_steps <= warmup:
        lr = cfg.lr_peak
    else:
        progress = (step - warmup) / (total_steps - warmup)
        lr = cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))

    lam = lambda_dag * min(1.0, max(0.0, epoch) / LAMBDA_RAMP_EPOCHS)
    return lr, lam


# ==================== AUXILIARY CORRUPTIONS ====================
def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def inject_outliers(windows: np.ndarray, rho: float, seed: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spike round(rho*T) distinct timesteps per window by +-U[0.5, 1] * 6 * channel std

    Returns (perturbed windows, clean targets, B x T injection mask).
    """
    if not 0.0 <= rho <= 1.0:
        raise InvalidArgumentError(f"rho must lie in [0, 1], got {rho}")
    windows = np.asarray(windows, dtype=float)
    B, T, C = windows.shape
    clean = windows.copy()
    mask = np.zeros((B, T), dtype=bool)
    n = _round_half_up(rho * T)
    if n == 0:
        return windows.copy(), clean, mask

    rng = np.random.default_rng(seed)
    std = windows.std(axis=(0, 1))
    std[std == 0] = 1.0
    for b in range(B):
        mask[b, rng.choice(T, size=n, replace=False)] = True
    magnitude = rng.uniform(0.5, 1.0, (B, T, C)) * rng.choice([-1.0, 1.0], (B, T, C))
    perturbed = windows + mask[:, :, None] * magnitude * SPIKE_SCALE * std
    return perturbed, clean, mask


def emphasis_mask(batch: int, length: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """round(rate*T) timesteps per window chosen uniformly"""
    mask = np.zeros((batch, length), dtype=bool)
    n = _round_half_up(rate * length)
    if n:
        for b in range(batch):
            mask[b, rng.choice(length, size=n, replace=False)] = True
    return mask


# ==================== OPTIMISER ====================
def build_optimizer(params: Iterable[nn.Parameter], cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=cfg.lr_peak, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)


def clip_gradients(params: Sequence[nn.Parameter], clip_norm: float) -> float:
    """Global-norm clip in place; returns the pre-clip norm. clip_norm = inf leaves gradients untouched"""
    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    if math.isinf(clip_norm):
        return float(torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])))
    return float(torch.nn.utils.clip_grad_norm_(params, clip_norm))


def add_prior_term(total: torch.Tensor, parts: Dict[str, float], prior_gap: Optional[torch.Tensor],
                   lambda_prior: float) -> Tuple[torch.Tensor, Dict[str, float]]:
    """Add lambda_prior * prior_gap when the temporal view is active and the weight is positive"""
    if prior_gap is None or lambda_prior <= 0:
        return total, {**parts, "prior": 0.0}
    return total + lambda_prior * prior_gap, {**parts, "prior": float(prior_gap.detach())}


def train(
    model: CcgMsd,
    data: WindowBatch,
    cfg: TrainConfig,
    loss_fn: Callable = composite_loss,
    parameters: Optional[Sequence[nn.Parameter]] = None,
    log_every: int = 50,
) -> TrainResult:
    """Run epochs x ceil(B / batch_size) AdamW steps over the windows"""
    windows = np.asarray(data.windows, dtype=float)
    n = len(windows)
    if n == 0:
        raise InvalidArgumentError("no training windows")
    params = list(parameters) if parameters is not None else [p for p in model.parameters() if p.requires_grad]
    optimizer = build_optimizer(params, cfg)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if total_steps <= cfg.warmup_steps:
        logger.warning(f"total steps {total_steps} <= warmup {cfg.warmup_steps}: schedule is pure warmup")

    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    result = TrainResult(model=model)
    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = windows[order[start:start + cfg.batch_size]]
            inputs, targets, _ = inject_outliers(batch, cfg.inject_rate, int(rng.integers(2 ** 31)))
            mask = emphasis_mask(len(batch), batch.shape[1], cfg.mask_rate, rng)
            inputs[mask] = 0.0

            lr, lam = schedules(step, total_steps, step / steps_per_epoch, cfg, model.config.lambda_dag)
            for group in optimizer.param_groups:
                group["lr"] = lr

            out = model(torch.from_numpy(inputs).to(dtype))
            total, parts = loss_fn(torch.from_numpy(targets).to(dtype), out.fused, out.adjacency,
                                   torch.from_numpy(mask), model.config, lam)
            total, parts = add_prior_term(total, parts, out.prior_gap, model.config.lambda_prior)
            for name, value in [("total", float(total.detach())), *parts.items()]:
                if not math.isfinite(value):
                    raise NonFiniteLossError(step, name, value)

            optimizer.zero_grad()
            total.backward()
            clip_gradients(params, cfg.clip_norm)
            optimizer.step()

            result.trace.append({"step": step, "total": float(total.detach()), **parts, "lr": lr, "lambda_dag": lam})
            if log_every and step % log_every == 0:
                logger.info(f"step {step}/{total_steps} loss={float(total.detach()):.5f} "
                            f"rec={parts['rec']:.5f} h={parts['dag']:.3e} lr={lr:.2e}")
            step += 1

    model.eval()
    return result


# ==================== GRADIENT CHECK ====================
@dataclass
class GradCheckReport:
    blocks: Dict[str, float]
    n_coordinates: int
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.blocks.values()) if self.blocks else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def finite_diff_check(
    model: nn.Module,
    loss: Callable[[], torch.Tensor],
    h: float = 1e-4,
    tolerance: float = 1e-3,
    max_per_block: int = 200,
    atol: float = 1e-5,
    seed: int = 0,
) -> GradCheckReport:
    """Compare autograd gradients to central differences, per named parameter block

    loss must be a deterministic closure over the model's current parameters.
    Blocks larger than max_per_block are sampled without replacement.
    """
    model.zero_grad()
    loss().backward()
    analytic = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)).view(-1)
        for name, p in model.named_parameters()
    }

    rng = np.random.default_rng(seed)
    blocks: Dict[str, float] = {}
    checked = 0
    with torch.no_grad():
        for name, p in model.named_parameters():
            flat = p.data.view(-1)
            coords = np.arange(flat.numel())
            if len(coords) > max_per_block:
                coords = np.sort(rng.choice(len(coords), size=max_per_block, replace=False))
            worst = 0.0
            for i in coords:
                original = float(flat[i])
                flat[i] = original + h
                plus = float(loss())
                flat[i] = original - h
                minus = float(loss())
                flat[i] = original
                numeric = (plus - minus) / (2 * h)
                a = float(analytic[name][i])
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), atol))
            blocks[name] = worst
            checked += len(coords)

    report = GradCheckReport(blocks=blocks, n_coordinates=checked, tolerance=tolerance)
    logger.info(f"Gradient check: {checked} coordinates, max rel err {report.max_error:.2e}")
    return report
