"""
Run artifacts and report emission: main, metrics, robustness, transfer, efficiency and ablation tables
Every table is rebuilt from the seed-level dumps under `<run>/reports/`
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .. import __version__
from ..errors import InvalidArgumentError
from ..metrics import METRIC_NAMES, MetricReport, aggregate_seeds
from ..perturb import FAMILIES, summarize_robustness
from .config import CCG_FAMILY, canonical_json, method_ablation

logger = logging.getLogger(__name__)

KINDS = ("effectiveness", "robustness", "transfer", "efficiency")
FORMATS = ("json", "csv", "markdown")


@dataclass
class RunArtifact:
    config: Dict
    code_version: str = __version__
    effectiveness: List[Dict] = field(default_factory=list)
    robustness: List[Dict] = field(default_factory=list)
    transfer: List[Dict] = field(default_factory=list)
    efficiency: List[Dict] = field(default_factory=list)

    @property
    def failures(self) -> List[Dict]:
        return [r for kind in KINDS for r in getattr(self, kind) if r.get("status") != "ok"]

    def to_json(self) -> str:
        return canonical_json(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunArtifact":
        return cls(**json.loads(text))


def dump_name(kind: str, method: str, dataset: str, seed: int) -> str:
    return f"{kind}__{method.replace(':', '-')}__{dataset}__seed{seed}.json"


def collect_artifact(run_dir: Union[str, Path]) -> RunArtifact:
    """Assemble an artifact from config.json and every seed-level dump of a run"""
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    config = json.loads(config_path.read_text()) if config_path.exists() else {}
    artifact = RunArtifact(config=config)
    for path in sorted((run_dir / "reports").glob("*.json")):
        record = json.loads(path.read_text())
        kind = record.get("kind")
        if kind in KINDS:
            getattr(artifact, kind).append(record)
    return artifact


# ==================== TABLES ====================
def _ok(records: Sequence[Dict]) -> List[Dict]:
    return [r for r in records if r.get("status") == "ok"]


def _rank(values: pd.Series) -> pd.Series:
    """Descending rank; ties share the smallest rank, missing values rank last"""
    return values.fillna(-np.inf).rank(method="min", ascending=False).astype(int)


def _metric_reports(records: Sequence[Dict]) -> List[MetricReport]:
    return [MetricReport(**r["metrics"]) for r in _ok(records)]


def metrics_table(artifact: RunArtifact) -> pd.DataFrame:
    """Seed aggregates of all six metrics per (method, dataset)"""
    reports = _metric_reports(artifact.effectiveness)
    groups: Dict = {}
    for r in reports:
        groups.setdefault((r.method, r.dataset), []).append(r)
    rows = []
    for (method, dataset), group in sorted(groups.items()):
        agg = aggregate_seeds(group)
        row = {"method": method, "dataset": dataset, "n_seeds": agg.n_seeds}
        for name in METRIC_NAMES:
            row[name] = agg.mean[name]
            row[f"{name}_std"] = agg.std[name]
        rows.append(row)
    return pd.DataFrame(rows)


def main_table(artifact: RunArtifact, metric: str = "vus_roc") -> pd.DataFrame:
    """Headline methods as rows, datasets as columns (mean and std), Avg and Rank"""
    agg = metrics_table(artifact)
    if agg.empty:
        return agg
    agg = agg[[method_ablation(m) is None for m in agg["method"]]]
    if agg.empty:
        return agg
    datasets = list(dict.fromkeys(artifact.config.get("datasets") or sorted(agg["dataset"].unique())))
    rows = []
    for method, group in agg.groupby("method", sort=True):
        row: Dict = {"method": method}
        by_ds = group.set_index("dataset")
        for ds in datasets:
            row[ds] = float(by_ds.loc[ds, metric]) if ds in by_ds.index else np.nan
            row[f"{ds}_std"] = float(by_ds.loc[ds, f"{metric}_std"]) if ds in by_ds.index else np.nan
        row["avg"] = float(np.nanmean([row[ds] for ds in datasets]))
        rows.append(row)
    table = pd.DataFrame(rows)
    table["rank"] = _rank(table["avg"])
    return table.sort_values(["rank", "method"]).reset_index(drop=True)


def robustness_table(artifact: RunArtifact) -> pd.DataFrame:
    records: Dict[str, List[Dict]] = {}
    for r in _ok(artifact.robustness):
        records.setdefault(r["method"], []).extend(r["records"])
    rows = []
    for method, recs in sorted(records.items()):
        families = [f for f in FAMILIES if any(x["family"] == f for x in recs)]
        summary = summarize_robustness(recs, families)
        row = {"method": method, "base": summary.clean[0], "base_std": summary.clean[1]}
        for f in families:
            row[f] = summary.families[f][0]
            row[f"{f}_std"] = summary.families[f][1]
        row["avg"] = summary.avg
        for f in families:
            row[f"retention_{f}"] = summary.retention[f]
        rows.append(row)
    table = pd.DataFrame(rows)
    if not table.empty:
        table["rank"] = _rank(table["avg"])
        table = table.sort_values(["rank", "method"]).reset_index(drop=True)
    return table


def transfer_matrices(artifact: RunArtifact) -> Dict[str, pd.DataFrame]:
    """source x target VUS-ROC matrix per method"""
    frames: Dict[str, List[Dict]] = {}
    for r in _ok(artifact.transfer):
        frames.setdefault(r["method"], []).append(r)
    datasets = artifact.config.get("datasets") or []
    out = {}
    for method, recs in sorted(frames.items()):
        matrix = pd.DataFrame(recs).pivot(index="source", columns="target", values="vus_roc")
        order = [d for d in datasets if d in matrix.index] or sorted(matrix.index)
        cols = [d for d in datasets if d in matrix.columns] or sorted(matrix.columns)
        matrix = matrix.reindex(index=order, columns=cols)
        matrix.index.name = "source"
        out[method] = matrix
    return out


def transfer_summary(matrices: Dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Diagonal (in-distribution) and off-diagonal means per method"""
    rows = []
    for method, matrix in matrices.items():
        values = matrix.to_numpy(dtype=float)
        on_diag = np.array([[s == t for t in matrix.columns] for s in matrix.index])
        diag = values[on_diag]
        off = values[~on_diag]
        rows.append({
            "method": method,
            "diagonal_mean": float(np.nanmean(diag)) if diag.size else np.nan,
            "off_diagonal_mean": float(np.nanmean(off)) if off.size else np.nan,
        })
    return pd.DataFrame(rows)


def efficiency_table(artifact: RunArtifact) -> pd.DataFrame:
    cols = ["method", "params", "train_throughput", "infer_latency_ms", "peak_memory_mb"]
    rows = [{c: r.get(c) for c in cols} for r in _ok(artifact.efficiency)]
    return pd.DataFrame(rows, columns=cols)


def ablation_table(artifact: RunArtifact, metric: str = "vus_roc") -> pd.DataFrame:
    """Per-dataset delta (x100) of each ablation variant against the same-seed headline value"""
    reports = _metric_reports(artifact.effectiveness)
    headline = {(r.dataset, r.seed): getattr(r, metric) for r in reports if r.method == CCG_FAMILY}
    deltas: Dict = {}
    for r in reports:
        ablation = method_ablation(r.method)
        if ablation is None or (r.dataset, r.seed) not in headline:
            continue
        deltas.setdefault((r.method, r.dataset), []).append(100.0 * (getattr(r, metric) - headline[(r.dataset, r.seed)]))
    if not deltas:
        return pd.DataFrame()
    datasets = artifact.config.get("datasets") or sorted({d for _, d in deltas})
    rows = []
    for method in sorted({m for m, _ in deltas}):
        row: Dict = {"variant": method}
        for ds in datasets:
            values = pd.Series(deltas.get((method, ds), []), dtype=float)
            row[ds] = float(values.mean()) if len(values) else np.nan
            row[f"{ds}_std"] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        rows.append(row)
    return pd.DataFrame(rows)


def build_tables(artifact: RunArtifact) -> Dict[str, pd.DataFrame]:
    tables: Dict[str, pd.DataFrame] = {}
    if artifact.effectiveness:
        tables["main"] = main_table(artifact)
        tables["metrics"] = metrics_table(artifact)
        ablation = ablation_table(artifact)
        if not ablation.empty:
            tables["ablation"] = ablation
    if artifact.robustness:
        tables["robustness"] = robustness_table(artifact)
    if artifact.transfer:
        matrices = transfer_matrices(artifact)
        for method, matrix in matrices.items():
            tables[f"transfer__{method.replace(':', '-')}"] = matrix.reset_index()
        tables["transfer_summary"] = transfer_summary(matrices)
    if artifact.efficiency:
        tables["efficiency"] = efficiency_table(artifact)
    return tables


# ==================== RENDERING ====================
def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    if mean is None or (isinstance(mean, float) and np.isnan(mean)):
        return "--"
    return f"{mean:.{digits}f} ± {std:.{digits}f}"


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return "--"
    if isinstance(value, (float, np.floating)):
        return f"{value:.3f}"
    return str(value)


def to_markdown(df: pd.DataFrame) -> str:
    """Pipe table; a column `x` with a sibling `x_std` is rendered as 'mean ± std'"""
    columns = [c for c in df.columns if not (str(c).endswith("_std") and str(c)[:-4] in df.columns)]
    lines = ["| " + " | ".join(str(c) for c in columns) + " |", "|" + "---|" * len(columns)]
    for _, row in df.iterrows():
        cells = []
        for c in columns:
            std_col = f"{c}_std"
            if std_col in df.columns:
                cells.append(format_mean_std(row[c], row[std_col]))
            else:
                cells.append(_cell(row[c]))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_report(artifact: RunArtifact, out_dir: Union[str, Path], formats: Sequence[str] = FORMATS) -> List[Path]:
    """Write the lossless artifact JSON and every table as CSV and/or markdown"""
    out_dir = Path(out_dir)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise InvalidArgumentError(f"Unknown report formats: {sorted(unknown)}")
    written: List[Path] = []
    out_dir.mkdir(parents=True, exist_ok=True)

    if "json" in formats:
        path = out_dir / "artifact.json"
        path.write_text(artifact.to_json())
        written.append(path)

    tables = build_tables(artifact)
    if tables and ("csv" in formats or "markdown" in formats):
        table_dir = out_dir / "tables"
        table_dir.mkdir(parents=True, exist_ok=True)
        for name, df in tables.items():
            if "csv" in formats:
                path = table_dir / f"{name}.csv"
                df.to_csv(path, index=False)
                written.append(path)
            if "markdown" in formats:
                path = table_dir / f"{name}.md"
                path.write_text(to_markdown(df))
                written.append(path)

    logger.info(f"Emitted {len(written)} report files to {out_dir}")
    return written
