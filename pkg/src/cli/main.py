"""regkg command line"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config.settings import config, load_pipeline_config
from src import __version__
from src.cli import commands
from src.cli.commands import CONSOLIDATED_FILE, EXTRACTION_FILE, SEGMENTS_FILE, apply_overrides
from src.domain.exceptions import RegKGError


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return number


def _entity_count(value: str) -> int:
    number = int(value)
    if not 6 <= number <= 100:
        raise argparse.ArgumentTypeError(f"must be between 6 and 100, got {value}")
    return number


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline YAML config")
    common.add_argument("--log-level", default=None, help=f"logging level (default {config.LOG_LEVEL})")
    common.add_argument("--mode", choices=["ontology", "baseline"], help="extraction prompt")
    common.add_argument("--parallelism", type=_positive_int, help="concurrent backend calls")
    common.add_argument("--backend", choices=["live", "replay", "oracle"], help="completion backend")
    common.add_argument("--price-table", dest="price_table", help="price table YAML")
    common.add_argument("--timestamps", action="store_true", help="record run timestamps in the extraction file")

    parser = argparse.ArgumentParser(
        prog="regkg",
        description="Turn regulatory document bundles into ontology-validated knowledge graphs",
    )
    parser.add_argument("--version", action="version", version=f"regkg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", parents=[common], help="split a bundle into TOC-aligned segments")
    p.add_argument("bundle")
    p.add_argument("--out", help=f"segment file (default <output_dir>/{SEGMENTS_FILE})")

    p = sub.add_parser("extract", parents=[common], help="extract entities and relationships per segment")
    p.add_argument("segments")
    p.add_argument("--out", help=f"extraction file (default <output_dir>/{EXTRACTION_FILE})")

    p = sub.add_parser("consolidate", parents=[common], help="merge per-segment results into one graph")
    p.add_argument("extraction")
    p.add_argument("--out", help=f"graph file (default <output_dir>/{CONSOLIDATED_FILE})")

    p = sub.add_parser("validate", parents=[common], help="semantic and schema validation plus metrics")
    p.add_argument("graph")
    p.add_argument("--out", help="output directory (default <output_dir>)")

    p = sub.add_parser("pipeline", parents=[common], help="segment, extract, consolidate and validate")
    p.add_argument("bundle")
    p.add_argument("--out", help="output directory (default <output_dir>)")
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs are up to date")

    p = sub.add_parser("export", parents=[common], help="export a graph as native JSON or N-Triples")
    p.add_argument("graph")
    p.add_argument("--format", choices=["native", "triples"], default="native")
    p.add_argument("--out", required=True, help="output file")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic bundle with oracle answers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=_entity_count, default=30)
    p.add_argument("--out", help="output directory (default <output_dir>/synth-<seed>)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or config.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = apply_overrides(
            load_pipeline_config(args.config),
            mode=args.mode,
            parallelism=args.parallelism,
            backend=args.backend,
            price_table=args.price_table,
        )
    except RegKGError as e:
        print(f"error: {e}", file=sys.stderr)
        return commands.EXIT_INPUT
    out_dir = Path(cfg.output_dir)

    if args.command == "segment":
        return commands.cmd_segment(args.bundle, args.out or out_dir / SEGMENTS_FILE, cfg)
    if args.command == "extract":
        return commands.cmd_extract(
            args.segments, args.out or out_dir / EXTRACTION_FILE, cfg, timestamps=args.timestamps
        )
    if args.command == "consolidate":
        return commands.cmd_consolidate(args.extraction, args.out or out_dir / CONSOLIDATED_FILE)
    if args.command == "validate":
        return commands.cmd_validate(args.graph, args.out or out_dir, cfg)
    if args.command == "pipeline":
        return commands.cmd_pipeline(
            args.bundle, args.out or out_dir, cfg, resume=args.resume, timestamps=args.timestamps
        )
    if args.command == "export":
        return commands.cmd_export(args.graph, args.format, args.out)
    if args.command == "synth":
        return commands.cmd_synth(args.seed, args.entities, args.out or out_dir / f"synth-{args.seed}")
    return commands.EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
