"""Orchestration: configuration, detectors, grids, ledger and reports"""

from .config import BenchConfig, TransferPolicy, canonical_json, method_family, stable_seed
from .reports import RunArtifact, collect_artifact, emit_report
from .runners import (
    BenchRun,
    measure_steps,
    run_effectiveness,
    run_efficiency,
    run_robustness,
    run_transfer,
)

__all__ = [
    "BenchConfig",
    "BenchRun",
    "RunArtifact",
    "TransferPolicy",
    "canonical_json",
    "collect_artifact",
    "emit_report",
    "measure_steps",
    "method_family",
    "run_effectiveness",
    "run_efficiency",
    "run_robustness",
    "run_transfer",
    "stable_seed",
]
