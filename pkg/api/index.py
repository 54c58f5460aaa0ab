"""
CCG Bench report server
Read-only HTTP view over run directories emitted by the `bench` CLI
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd
from fastapi import FastAPI, HTTPException

from ccg_bench import __version__
from ccg_bench.bench.reports import collect_artifact

logger = logging.getLogger(__name__)


def _run_dirs(out_root: Path) -> List[Path]:
    if not out_root.exists():
        return []
    return sorted(p for p in out_root.iterdir() if (p / "config.json").exists())


def create_app(out_dir: Union[str, Path] = "runs") -> FastAPI:
    out_root = Path(out_dir)
    app = FastAPI(title="CCG Bench", version=__version__)

    def run_dir(run_id: str) -> Path:
        path = out_root / run_id
        if "/" in run_id or run_id.startswith(".") or not (path / "config.json").exists():
            raise HTTPException(status_code=404, detail=f"Unknown run '{run_id}'")
        return path

    @app.get("/api/status")
    async def get_status() -> Dict:
        return {
            "status": "running",
            "version": __version__,
            "out": str(out_root),
            "runs": len(_run_dirs(out_root)),
        }

    @app.get("/api/runs")
    async def get_runs() -> Dict:
        runs = [{"run_id": p.name, "config": json.loads((p / "config.json").read_text())}
                for p in _run_dirs(out_root)]
        return {"runs": runs}

    @app.get("/api/runs/{run_id}/reports")
    async def get_reports(run_id: str) -> Dict:
        artifact = collect_artifact(run_dir(run_id))
        return {
            "run_id": run_id,
            "effectiveness": artifact.effectiveness,
            "robustness": artifact.robustness,
            "transfer": artifact.transfer,
            "efficiency": artifact.efficiency,
        }

    @app.get("/api/runs/{run_id}/tables/{name}")
    async def get_table(run_id: str, name: str) -> Dict:
        path = run_dir(run_id) / "tables" / f"{name}.csv"
        if "/" in name or not path.exists():
            raise HTTPException(status_code=404, detail=f"Unknown table '{name}' for run '{run_id}'")
        frame = pd.read_csv(path, float_precision="round_trip")
        # NaN is not valid JSON
        rows = frame.astype(object).where(frame.notna(), None).to_dict(orient="records")
        return {"run_id": run_id, "table": name, "columns": list(frame.columns), "rows": rows}

    logger.info(f"Serving run artifacts from {out_root}")
    return app


app = create_app(os.getenv("CCG_BENCH_OUT", "runs"))
