"""
Command-line entry point: `bench effectiveness|robustness|transfer|efficiency|report|serve|synth`
"""

import argparse
import asyncio
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .bench.config import BenchConfig
from .bench.reports import FORMATS, collect_artifact, emit_report
from .bench.runners import VERBS, BenchRun
from .data import make_synthetic_suite, write_dataset
from .errors import BenchError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _seed_list(value: str) -> List[int]:
    try:
        return [int(v) for v in _csv_list(value)]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got '{value}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Multivariate time-series anomaly detection benchmark")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=os.getenv("CCG_BENCH_LOG_LEVEL", "INFO"),
                        help="logging level (env CCG_BENCH_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb in VERBS:
        p = sub.add_parser(verb, help=f"run the {verb} grid")
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 0,1,2")
        p.add_argument("--dataset", type=_csv_list, help="comma-separated dataset names")
        p.add_argument("--method", type=_csv_list, help="comma-separated method names")
        p.add_argument("--out", help="output root")
        p.add_argument("--workers", type=int, help="concurrent grid cells")
        p.add_argument("--data-root", help="dataset root directory")

    p = sub.add_parser("report", help="re-emit tables from the dumps of a run")
    p.add_argument("--config", type=Path, help="JSON run config (locates the run directory)")
    p.add_argument("--out", help="output root")
    p.add_argument("--run", type=Path, help="run directory; overrides --config/--out")
    p.add_argument("--format", dest="formats", type=_csv_list, default=list(FORMATS),
                   help="comma-separated subset of json,csv,markdown")

    p = sub.add_parser("serve", help="serve run artifacts over HTTP")
    p.add_argument("--out", default="runs", help="output root")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("synth", help="write the synthetic desk suite")
    p.add_argument("--data-root", default="data")
    p.add_argument("--name", default="synthetic")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args: argparse.Namespace) -> BenchConfig:
    cfg = BenchConfig.from_json(args.config) if getattr(args, "config", None) else BenchConfig()
    return cfg.with_overrides(
        seeds=getattr(args, "seeds", None),
        datasets=getattr(args, "dataset", None),
        methods=getattr(args, "method", None),
        out=getattr(args, "out", None),
        workers=getattr(args, "workers", None),
        data_root=getattr(args, "data_root", None),
    )


def _run_verb(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    cfg.validate()
    run = BenchRun(cfg)
    asyncio.run(run.execute(args.verb))
    logger.info(f"Run directory: {run.run_dir}")
    return EXIT_PARTIAL if run.failed else EXIT_OK


def _report(args: argparse.Namespace) -> int:
    run_dir = args.run if args.run is not None else load_config(args).run_dir
    if not (run_dir / "config.json").exists():
        logger.error(f"{run_dir} is not a run directory")
        return EXIT_CONFIG
    artifact = collect_artifact(run_dir)
    emit_report(artifact, run_dir, args.formats)
    return EXIT_PARTIAL if artifact.failures else EXIT_OK


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    from api.index import create_app

    uvicorn.run(create_app(args.out), host=args.host, port=args.port, log_level="info", workers=1)
    return EXIT_OK


def _synth(args: argparse.Namespace) -> int:
    ds = make_synthetic_suite(channels=args.channels, seed=args.seed, name=args.name)
    path = write_dataset(ds, args.data_root)
    logger.info(f"Wrote synthetic suite to {path} (C={ds.n_channels}, anomaly ratio {ds.anomaly_ratio:.3f})")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=str(args.log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        if args.verb in VERBS:
            return _run_verb(args)
        if args.verb == "report":
            return _report(args)
        if args.verb == "serve":
            return _serve(args)
        return _synth(args)
    except BenchError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
