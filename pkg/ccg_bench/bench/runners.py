"""
Bench orchestrator: effectiveness, robustness, transfer and efficiency grids

Each grid cell is an independent job scheduled on a worker thread up to `workers`
at a time. A failed cell is logged, dumped with null payload fields and recorded
in the run ledger; the remaining cells carry on.
"""

import asyncio
import logging
import sys
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from ..ccg.model import adapt_channels
from ..data import (
    TimeSeriesDataset,
    ensure_synthetic_suite,
    load_dataset,
    load_msds,
    make_windows,
    pad_channels,
    zscore,
)
from ..metrics import MetricReport, ScoredSeries, evaluate_scores, vus
from ..perturb import RobustnessSummary, robustness_suite, summarize_robustness
from ..training import train
from .config import AR_FAMILY, CCG_FAMILY, EXTERNAL_FAMILY, BenchConfig, canonical_json, method_family, stable_seed
from .detectors import CcgDetector, ExternalScoreDetector, LinearArDetector
from .ledger import RunLedger, RunLogger
from .reports import collect_artifact, dump_name, emit_report, transfer_matrices, transfer_summary

logger = logging.getLogger(__name__)

VERBS = ("effectiveness", "robustness", "transfer", "efficiency")

# payload keys written as null when a cell fails
PAYLOAD_FIELDS = {
    "effectiveness": ("metrics",),
    "robustness": ("records",),
    "transfer": ("source", "target", "policy", "vus_roc"),
    "efficiency": ("params", "train_throughput", "infer_latency_ms", "peak_memory_mb", "warmup_steps", "measured_steps"),
}

SYNTHETIC = "synthetic"
EFFICIENCY_DATASET = "workload"


@dataclass(frozen=True)
class Cell:
    kind: str
    method: str
    dataset: str
    seed: int
    context: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def label(self) -> str:
        return f"{self.method}/{self.dataset}/seed{self.seed}"


# ==================== EFFICIENCY TIMING ====================
@dataclass
class StepTiming:
    steps: int
    elapsed: float
    batch: int

    @property
    def throughput(self) -> float:
        """Samples per second"""
        return self.batch * self.steps / self.elapsed if self.elapsed > 0 else float("inf")

    @property
    def latency_ms(self) -> float:
        """Milliseconds per sample"""
        return self.elapsed / (self.steps * self.batch) * 1000.0


def measure_steps(step_fn: Callable[[np.ndarray], Any], batch: np.ndarray, warmup: int = 5,
                  measured: int = 30) -> StepTiming:
    """Run `warmup` untimed calls, then time exactly `measured` calls"""
    for _ in range(warmup):
        step_fn(batch)
    start = time.perf_counter()
    for _ in range(measured):
        step_fn(batch)
    return StepTiming(steps=measured, elapsed=time.perf_counter() - start, batch=len(batch))


def peak_memory_mb() -> Optional[float]:
    """Peak resident set size of this process, None where the platform does not expose it"""
    try:
        import resource
    except ImportError:
        return None
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    if peak <= 0:
        return None
    # bytes on macOS, kilobytes on Linux
    return peak / 2 ** 20 if sys.platform == "darwin" else peak / 2 ** 10


# ==================== ORCHESTRATOR ====================
class BenchRun:
    """One run directory `<out>/<run-id>/` and the grids executed in it"""

    def __init__(self, cfg: BenchConfig):
        self.cfg = cfg
        self.run_dir = cfg.run_dir
        self.checkpoint_dir = Path(cfg.out) / "checkpoints"
        self.ledger = RunLedger(self.run_dir / "ledger.db")
        self.log = RunLogger(self.ledger)
        self.failed = 0
        self._datasets: Dict[str, TimeSeriesDataset] = {}
        self._data_lock = threading.Lock()
        self._fit_locks: Dict[str, threading.Lock] = {}
        # training inside a cell stays single-threaded
        torch.set_num_threads(1)

    async def setup(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "config.json").write_text(self.cfg.snapshot_json())
        await self.ledger.initialize_database()
        self.log.info(f"Run {self.cfg.run_id} in {self.run_dir}")

    async def execute(self, verb: str):
        """Run one verb end to end, then rebuild the report from every dump on disk"""
        if verb not in VERBS:
            raise ValueError(f"Unknown verb '{verb}', expected one of {VERBS}")
        await self.setup()
        self.log.info("=" * 60)
        self.log.info(f"{verb.upper()}: methods={self.cfg.methods} datasets={self.cfg.datasets} seeds={self.cfg.seeds}")
        self.log.info("=" * 60)
        result = await getattr(self, f"run_{verb}")()
        await self.ledger.flush()
        self.report()
        if self.failed:
            self.log.warning(f"{verb}: {self.failed} cell(s) failed")
        return result

    def report(self) -> List[Path]:
        return emit_report(collect_artifact(self.run_dir), self.run_dir)

    # ==================== DATA ====================
    def dataset(self, name: str) -> TimeSeriesDataset:
        with self._data_lock:
            if name not in self._datasets:
                self._datasets[name] = self._load(name)
            return self._datasets[name]

    def _load(self, name: str) -> TimeSeriesDataset:
        root = Path(self.cfg.data_root)
        if name == SYNTHETIC:
            ensure_synthetic_suite(root, name)
        if name == "msds" and not (root / name / "train.csv").exists() and self.cfg.msds_hosts:
            return load_msds(root, self.cfg.msds_hosts, self.cfg.msds_metrics)
        return zscore(load_dataset(root, name))

    # ==================== DETECTORS ====================
    def _fit_lock(self, key: str) -> threading.Lock:
        """One lock per checkpoint key so concurrent cells never train the same model twice"""
        with self._data_lock:
            return self._fit_locks.setdefault(key, threading.Lock())

    def detector(self, method: str, ds: TimeSeriesDataset, seed: int):
        """Build and fit the detector for a cell; checkpoints make refits free"""
        family = method_family(method)
        if family == CCG_FAMILY:
            ccg = self.cfg.resolve_preset(method, ds.name)
            det = CcgDetector(method, ccg, self.cfg.train_config_for(ccg, ds.name, seed), self.cfg.window,
                              self.cfg.stride_for(ds.name), self.checkpoint_dir)
        elif family == AR_FAMILY:
            det = LinearArDetector(method, self.cfg.ar_order, self.checkpoint_dir)
        else:
            det = ExternalScoreDetector(method, Path(self.cfg.scores_root))

        with self._fit_lock(det.key(ds.name)):
            trained = det.fit(ds)
        if trained and det.trace is not None:
            path = self.run_dir / "traces" / f"{_slug(method)}__{ds.name}__seed{seed}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            det.trace.to_csv(path, index=False)
        return det

    def score(self, det, ds: TimeSeriesDataset, test: np.ndarray) -> np.ndarray:
        if isinstance(det, LinearArDetector):
            return det.score(test, ds.train[-det.order:])
        return det.score(test)

    # ==================== GRID ====================
    async def _run_grid(self, cells: Sequence[Cell], work: Callable[[Cell], Dict]) -> List[Tuple[Cell, Optional[Dict]]]:
        semaphore = asyncio.Semaphore(self.cfg.workers)

        async def run_cell(cell: Cell) -> Tuple[Cell, Optional[Dict]]:
            async with semaphore:
                try:
                    payload = await asyncio.to_thread(work, cell)
                    status, error = "ok", None
                    self.log.info(f"{cell.kind} {cell.label}: ok")
                except Exception as e:
                    payload, status, error = None, "failed", f"{type(e).__name__}: {e}"
                    self.failed += 1
                    self.log.error(f"{cell.kind} {cell.label} failed: {error}")
                self._write_dump(cell, status, error, payload)
                await self.ledger.record_cell(cell.kind, cell.method, cell.dataset, cell.seed, status, error)
                await self.ledger.maybe_flush()
                return cell, payload

        return list(await asyncio.gather(*(run_cell(c) for c in cells)))

    def _write_dump(self, cell: Cell, status: str, error: Optional[str], payload: Optional[Dict]) -> Path:
        record = {"kind": cell.kind, "method": cell.method, "dataset": cell.dataset, "seed": cell.seed,
                  "status": status, "error": error}
        record.update({k: None for k in PAYLOAD_FIELDS[cell.kind]})
        record.update(cell.context)
        if payload is not None:
            record.update(payload)
        path = self.run_dir / "reports" / dump_name(cell.kind, cell.method, cell.dataset, cell.seed)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(record))
        return path

    def _scored_methods(self, kind: str) -> List[str]:
        methods = []
        for method in self.cfg.methods:
            if method_family(method) == EXTERNAL_FAMILY:
                self.log.warning(f"{kind}: '{method}' only has precomputed scores, skipping")
                continue
            methods.append(method)
        return methods

    # ==================== EFFECTIVENESS ====================
    async def run_effectiveness(self) -> List[MetricReport]:
        cells = [Cell("effectiveness", m, d, s) for m in self.cfg.methods for d in self.cfg.datasets for s in self.cfg.seeds]
        results = await self._run_grid(cells, self._effectiveness_cell)
        return [MetricReport(**payload["metrics"]) for _, payload in results if payload is not None]

    def _effectiveness_cell(self, cell: Cell) -> Dict:
        ds = self.dataset(cell.dataset)
        det = self.detector(cell.method, ds, cell.seed)
        scores = self.score(det, ds, ds.test)
        path = self.run_dir / "scores" / f"{_slug(cell.method)}__{ds.name}__seed{cell.seed}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"score": scores}).to_csv(path, index=False)
        report = evaluate_scores(scores, ds.test_labels, cell.method, ds.name, cell.seed, self.cfg.metrics)
        return {"metrics": report.to_dict()}

    # ==================== ROBUSTNESS ====================
    async def run_robustness(self) -> Dict[str, RobustnessSummary]:
        methods = self._scored_methods("robustness")
        cells = [Cell("robustness", m, d, s) for m in methods for d in self.cfg.datasets for s in self.cfg.seeds]
        results = await self._run_grid(cells, self._robustness_cell)

        records: Dict[str, List[Dict]] = {}
        for cell, payload in results:
            if payload is not None:
                records.setdefault(cell.method, []).extend(payload["records"])
        summaries = {m: summarize_robustness(r, list(self.cfg.robustness)) for m, r in records.items()}
        for method, summary in summaries.items():
            self.log.info(f"robustness {method}: base={summary.clean[0]:.4f} avg={summary.avg:.4f}")
        return summaries

    def _robustness_cell(self, cell: Cell) -> Dict:
        ds = self.dataset(cell.dataset)
        det = self.detector(cell.method, ds, cell.seed)

        def scores(d: TimeSeriesDataset, seed: int, test: np.ndarray) -> np.ndarray:
            return self.score(det, d, test)

        summary = robustness_suite(scores, [ds], [cell.seed], self.cfg.robustness, self.cfg.metrics,
                                   self.cfg.shift_mode)
        return {"records": summary.records}

    # ==================== TRANSFER ====================
    async def run_transfer(self) -> Dict[str, pd.DataFrame]:
        seed = self.cfg.transfer_seed
        methods = self._scored_methods("transfer")
        cells = [
            Cell("transfer", m, f"{src}_to_{tgt}", seed,
                 {"source": src, "target": tgt, "policy": self.cfg.policy_for(m).kind})
            for m in methods for src in self.cfg.datasets for tgt in self.cfg.datasets
        ]
        await self._run_grid(cells, self._transfer_cell)

        artifact = collect_artifact(self.run_dir)
        matrices = transfer_matrices(artifact)
        for _, row in transfer_summary(matrices).iterrows():
            self.log.info(f"transfer {row['method']}: diagonal={row['diagonal_mean']:.4f} "
                          f"off-diagonal={row['off_diagonal_mean']:.4f}")
        return matrices

    def _transfer_cell(self, cell: Cell) -> Dict:
        source = self.dataset(cell.context["source"])
        target = self.dataset(cell.context["target"])
        policy = self.cfg.policy_for(cell.method)
        det = self.detector(cell.method, source, cell.seed)

        if source.name == target.name:
            scores = self.score(det, target, target.test)
        elif isinstance(det, CcgDetector):
            scores = self._transfer_ccg(det, source, target, policy.kind, policy.adapt_epochs, cell.seed)
        else:
            scores = self._transfer_ar(det, source, target, policy.kind)

        value = vus(ScoredSeries(scores, target.test_labels), self.cfg.metrics.vus_L, "roc")
        return {"vus_roc": value}

    def _transfer_ccg(self, det: CcgDetector, source: TimeSeriesDataset, target: TimeSeriesDataset,
                      kind: str, epochs: int, seed: int) -> np.ndarray:
        if kind == "pad":
            return det.score(pad_channels(target.test, source.n_channels))

        adapt_seed = stable_seed(seed, target.name)
        model, fresh = adapt_channels(det.model, target.n_channels, adapt_seed)
        for name, param in model.named_parameters():
            param.requires_grad_(name in fresh)
        params = [p for n, p in model.named_parameters() if n in fresh]
        windows = make_windows(target.train, self.cfg.window, self.cfg.stride_for(target.name))
        cfg = replace(det.train_cfg, epochs=epochs, seed=adapt_seed)
        logger.info(f"adapting {det.method} {source.name}->{target.name}: {len(params)} tensors on "
                    f"{windows.batch_size} windows")
        train(model, windows, cfg, parameters=params, log_every=0)
        return det.score(target.test, model=model)

    def _transfer_ar(self, det: LinearArDetector, source: TimeSeriesDataset, target: TimeSeriesDataset,
                     kind: str) -> np.ndarray:
        context = target.train[-det.order:]
        if kind == "pad":
            c = source.n_channels
            return det.model.score(pad_channels(target.test, c), pad_channels(context, c))
        return det.model.for_channels(target.n_channels).score(target.test, context)

    # ==================== EFFICIENCY ====================
    async def run_efficiency(self) -> List[Dict]:
        methods = self._scored_methods("efficiency")
        cells = [Cell("efficiency", m, EFFICIENCY_DATASET, 0) for m in methods]
        results = await self._run_grid(cells, self._efficiency_cell)
        return [{"method": c.method, **p} for c, p in results if p is not None]

    def workload(self) -> np.ndarray:
        shape = (self.cfg.efficiency_batch, self.cfg.window, self.cfg.efficiency_channels)
        return np.random.default_rng(0).normal(size=shape)

    def _efficiency_cell(self, cell: Cell) -> Dict:
        batch = self.workload()
        n_channels = batch.shape[2]
        if method_family(cell.method) == CCG_FAMILY:
            ccg = self.cfg.resolve_preset(cell.method, SYNTHETIC)
            det = CcgDetector(cell.method, ccg, self.cfg.train_config_for(ccg, SYNTHETIC, cell.seed),
                              self.cfg.window, 1, self.checkpoint_dir)
        else:
            det = LinearArDetector(cell.method, self.cfg.ar_order, self.checkpoint_dir)

        train_step, infer_step = det.step_functions(n_channels, cell.seed)
        warmup, measured = self.cfg.efficiency_warmup, self.cfg.efficiency_steps
        train_timing = measure_steps(train_step, batch, warmup, measured)
        infer_timing = measure_steps(infer_step, batch, warmup, measured)

        memory = peak_memory_mb()
        if memory is None:
            self.log.warning(f"efficiency {cell.method}: peak memory unavailable on {sys.platform}")
        return {
            "params": det.n_params,
            "train_throughput": train_timing.throughput,
            "infer_latency_ms": infer_timing.latency_ms,
            "peak_memory_mb": memory,
            "warmup_steps": warmup,
            "measured_steps": train_timing.steps,
        }


def _slug(method: str) -> str:
    return method.replace(":", "-")


# ==================== ENTRY POINTS ====================
def run_effectiveness(cfg: BenchConfig) -> List[MetricReport]:
    return asyncio.run(BenchRun(cfg).execute("effectiveness"))


def run_robustness(cfg: BenchConfig) -> Dict[str, RobustnessSummary]:
    return asyncio.run(BenchRun(cfg).execute("robustness"))


def run_transfer(cfg: BenchConfig) -> Dict[str, pd.DataFrame]:
    return asyncio.run(BenchRun(cfg).execute("transfer"))


def run_efficiency(cfg: BenchConfig) -> List[Dict]:
    return asyncio.run(BenchRun(cfg).execute("efficiency"))
