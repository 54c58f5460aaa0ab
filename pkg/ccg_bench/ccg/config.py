"""
Detector configuration, per-dataset headline presets and ablation transforms
"""

import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List

from ..errors import ConfigurationError

logger = logging.getLogger(__name__)

PROJECTIONS = ("mean", "max_smooth", "last")
VIEW_NAMES = ("channel", "patch", "temporal")


@dataclass(frozen=True)
class CcgConfig:
    use_channel_view: bool = True
    use_patch_view: bool = False
    use_temp_view: bool = False
    use_spectral: bool = True
    d_model: int = 32
    layers: int = 2
    heads: int = 2
    rank: int = 4
    k_periods: int = 3
    patch_len: int = 8
    patch_stride: int = 8
    ffn_mult: int = 2
    score_projection: str = "mean"
    smooth_window: int = 51
    epochs: int = 2
    inject_rate: float = 0.0
    mask_rate: float = 0.15
    lambda_dag: float = 0.05
    lambda_freq: float = 0.0
    lambda_prior: float = 0.0
    alpha: float = 1.0
    delta_p: float = 0.5
    delta_t: float = 0.5
    adj_bias_init: float = -1.0

    def __post_init__(self):
        if not (self.use_channel_view or self.use_patch_view or self.use_temp_view):
            raise ConfigurationError("At least one view must be enabled")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigurationError(f"smooth_window must be odd, got {self.smooth_window}")
        if self.score_projection not in PROJECTIONS:
            raise ConfigurationError(f"score_projection must be one of {PROJECTIONS}")
        if not 0.0 <= self.inject_rate <= 1.0 or not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigurationError("inject_rate and mask_rate must lie in [0, 1]")
        for name in ("d_model", "layers", "heads", "rank", "k_periods", "patch_len", "patch_stride", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.lambda_prior < 0:
            raise ConfigurationError(f"lambda_prior must be >= 0, got {self.lambda_prior}")
        if self.d_model % self.heads:
            raise ConfigurationError(f"heads={self.heads} must divide d_model={self.d_model}")

    @property
    def active_views(self) -> List[str]:
        flags = (self.use_channel_view, self.use_patch_view, self.use_temp_view)
        return [name for name, on in zip(VIEW_NAMES, flags) if on]

    @property
    def effective_delta_p(self) -> float:
        return self.delta_p if self.use_patch_view else 0.0

    @property
    def effective_delta_t(self) -> float:
        return self.delta_t if self.use_temp_view else 0.0

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "CcgConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ==================== PRESETS ====================
_CHANNEL_SPECTRAL = dict(use_channel_view=True, use_spectral=True, use_patch_view=False, use_temp_view=False)

PRESETS: Dict[str, CcgConfig] = {
    "smd": CcgConfig(**_CHANNEL_SPECTRAL, epochs=1, score_projection="max_smooth", inject_rate=0.10),
    "msl": CcgConfig(**_CHANNEL_SPECTRAL, epochs=12, score_projection="mean", inject_rate=0.0),
    "smap": CcgConfig(use_channel_view=True, use_spectral=True, use_patch_view=True, use_temp_view=True,
                      epochs=2, score_projection="max_smooth", inject_rate=0.20),
    "psm": CcgConfig(**_CHANNEL_SPECTRAL, epochs=12, score_projection="mean", inject_rate=0.0),
    "msds": CcgConfig(**_CHANNEL_SPECTRAL, epochs=8, score_projection="last", inject_rate=0.10),
    "synthetic": CcgConfig(**_CHANNEL_SPECTRAL, epochs=2, score_projection="mean", inject_rate=0.10),
}
DEFAULT_PRESET = "synthetic"


def preset_for(dataset: str) -> CcgConfig:
    """Headline configuration for a dataset; unknown datasets fall back to the desk preset"""
    key = dataset.lower()
    if key not in PRESETS:
        logger.debug(f"No headline preset for '{dataset}', using '{DEFAULT_PRESET}'")
    return PRESETS.get(key, PRESETS[DEFAULT_PRESET])


# ==================== ABLATIONS ====================
ABLATIONS = ("no_channel_graph", "no_spectral", "free_adjacency", "no_aux_losses", "dense_init")


def apply_ablation(config: CcgConfig, name: str) -> CcgConfig:
    """Return the config with one component removed or modified"""
    if name == "no_channel_graph":
        return replace(config, use_channel_view=False, use_patch_view=True)
    if name == "no_spectral":
        return replace(config, use_spectral=False)
    if name == "free_adjacency":
        return replace(config, lambda_dag=0.0)
    if name == "no_aux_losses":
        return replace(config, mask_rate=0.0, inject_rate=0.0)
    if name == "dense_init":
        return replace(config, adj_bias_init=1.0)
    raise ConfigurationError(f"Unknown ablation '{name}', expected one of {ABLATIONS}")
