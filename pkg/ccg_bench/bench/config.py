"""
Bench configuration: one declarative JSON document per run, CLI overrides, presets and run ids
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..ccg.config import CcgConfig, apply_ablation, preset_for
from ..errors import ConfigurationError
from ..metrics import MetricOptions
from ..perturb import DEFAULT_STRENGTHS, SHIFT_MODES
from ..training import TrainConfig

logger = logging.getLogger(__name__)

CCG_FAMILY = "ccg_msd"
AR_FAMILY = "linear_ar"
EXTERNAL_FAMILY = "external"

ALLOWED_POLICIES = {CCG_FAMILY: ("adapt", "pad"), AR_FAMILY: ("native", "pad")}
DEFAULT_POLICIES = {CCG_FAMILY: "adapt", AR_FAMILY: "native"}

# fields that do not change results and stay out of the run id
_RUN_ID_EXCLUDED = ("out", "workers")


def method_family(method: str) -> str:
    if method == CCG_FAMILY or method.startswith(CCG_FAMILY + ":"):
        return CCG_FAMILY
    if method == AR_FAMILY:
        return AR_FAMILY
    return EXTERNAL_FAMILY


def method_ablation(method: str) -> Optional[str]:
    if method_family(method) == CCG_FAMILY and ":" in method:
        return method.split(":", 1)[1]
    return None


@dataclass(frozen=True)
class TransferPolicy:
    kind: str
    adapt_epochs: int = 1

    def __post_init__(self):
        if self.kind not in ("adapt", "native", "pad"):
            raise ConfigurationError(f"Unknown transfer policy '{self.kind}'")
        if self.adapt_epochs < 1 or (self.kind == "adapt" and self.adapt_epochs > 1):
            raise ConfigurationError("adapt budget is exactly one epoch")


@dataclass
class BenchConfig:
    datasets: List[str] = field(default_factory=lambda: ["synthetic"])
    methods: List[str] = field(default_factory=lambda: [CCG_FAMILY, AR_FAMILY])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    window: int = 100
    train_stride: int = 5
    dataset_strides: Dict[str, int] = field(default_factory=lambda: {"msds": 1, "synthetic": 1})
    test_stride: int = 1
    ar_order: int = 8
    data_root: str = "data"
    scores_root: str = "scores"
    out: str = "runs"
    workers: int = 1
    metrics: MetricOptions = field(default_factory=MetricOptions)
    train: Dict[str, Any] = field(default_factory=dict)
    desk_datasets: List[str] = field(default_factory=lambda: ["synthetic"])
    desk_train: Dict[str, Any] = field(default_factory=lambda: {"lr_peak": 1e-3, "warmup_steps": 10, "batch_size": 16})
    ccg_overrides: Dict[str, Any] = field(default_factory=dict)
    robustness: Dict[str, List[float]] = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_STRENGTHS.items()})
    shift_mode: str = "rotate"
    transfer_policies: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_POLICIES))
    transfer_seed: int = 0
    adapt_epochs: int = 1
    msds_hosts: List[str] = field(default_factory=list)
    msds_metrics: List[str] = field(default_factory=lambda: ["cpu.user", "mem.used"])
    efficiency_batch: int = 64
    efficiency_channels: int = 38
    efficiency_warmup: int = 5
    efficiency_steps: int = 30

    def __post_init__(self):
        if isinstance(self.metrics, dict):
            self.metrics = MetricOptions(**self.metrics)
        self.validate()

    def validate(self) -> None:
        for name in ("datasets", "methods", "seeds"):
            if not getattr(self, name):
                raise ConfigurationError(f"'{name}' must be a non-empty list")
        if self.window < 1 or self.train_stride < 1 or self.test_stride != 1:
            raise ConfigurationError("window and train_stride must be >= 1; test scoring runs at stride 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.shift_mode not in SHIFT_MODES:
            raise ConfigurationError(f"shift_mode must be one of {SHIFT_MODES}")
        for family, kind in self.transfer_policies.items():
            if family not in ALLOWED_POLICIES or kind not in ALLOWED_POLICIES[family]:
                raise ConfigurationError(f"Transfer policy '{kind}' is not allowed for '{family}'")
        for method in self.methods:
            ablation = method_ablation(method)
            if ablation is not None:
                apply_ablation(CcgConfig(), ablation)
        for key in self.train:
            if key not in TrainConfig.__dataclass_fields__:
                raise ConfigurationError(f"Unknown train setting '{key}'")
        for key in self.ccg_overrides:
            if key not in CcgConfig.__dataclass_fields__:
                raise ConfigurationError(f"Unknown model setting '{key}'")

    # ==================== SERIALISATION ====================
    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BenchConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"Unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "BenchConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise ConfigurationError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def with_overrides(self, **overrides: Any) -> "BenchConfig":
        """Apply CLI flags; None values leave the field untouched"""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self

    def snapshot_json(self) -> str:
        return canonical_json(self.to_dict())

    @property
    def run_id(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in _RUN_ID_EXCLUDED}
        return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:12]

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.run_id

    # ==================== RESOLUTION ====================
    def stride_for(self, dataset: str) -> int:
        return int(self.dataset_strides.get(dataset, self.train_stride))

    def policy_for(self, method: str) -> TransferPolicy:
        family = method_family(method)
        if family not in ALLOWED_POLICIES:
            raise ConfigurationError(f"Method '{method}' has no transfer policy")
        kind = self.transfer_policies.get(family, DEFAULT_POLICIES[family])
        if kind not in ALLOWED_POLICIES[family]:
            raise ConfigurationError(f"Transfer policy '{kind}' is not allowed for '{family}'")
        return TransferPolicy(kind=kind, adapt_epochs=self.adapt_epochs)

    def resolve_preset(self, method: str, dataset: str) -> CcgConfig:
        config = preset_for(dataset)
        if self.ccg_overrides:
            config = replace(config, **self.ccg_overrides)
        ablation = method_ablation(method)
        return apply_ablation(config, ablation) if ablation else config

    def train_config_for(self, ccg: CcgConfig, dataset: str, seed: int) -> TrainConfig:
        settings: Dict[str, Any] = {}
        if dataset in self.desk_datasets:
            settings.update(self.desk_train)
        settings.update(self.train)
        settings.update(epochs=ccg.epochs, inject_rate=ccg.inject_rate, mask_rate=ccg.mask_rate, seed=seed)
        return TrainConfig(**settings)


def canonical_json(data: Any) -> str:
    """Sorted keys, two-space indent, trailing newline"""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def stable_seed(*parts: Any) -> int:
    """31-bit seed derived from the SHA-256 of the parts"""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).hexdigest()
    return int(digest[:8], 16) & 0x7FFFFFFF
