"""Stage commands

Each stage reads one artifact and writes the next; the pipeline chains them
in one output directory. `run_*` functions raise, `cmd_*` functions map
errors to exit codes and print the human-facing summary.
"""

import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import pandas as pd
from pydantic import ValidationError

from config.settings import BackendKind, PipelineConfig, PromptModeSetting, load_price_table
from src.data.artifacts import (
    CONSOLIDATED,
    EXTRACTION,
    METRICS,
    SEGMENTS,
    VALIDATED,
    make_header,
    read_artifact,
    read_json,
    sha256_file,
    sha256_text,
    write_artifact,
    write_jsonl,
)
from src.data.database import create_session, init_db
from src.domain.consolidation import ConsolidationResult, consolidate
from src.domain.exceptions import ArtifactError, BackendError, ExtractionFailedError, RegKGError
from src.domain.metrics import CostLedger, MetricsSummary, compute_summary
from src.domain.models import DocumentBundle, KnowledgeGraph, Segment, ValidationReport
from src.domain.segmentation import SegmentationResult, segment_document
from src.services.completion import CompletionBackend, build_backend
from src.services.export_service import export_graph, graph_payload, load_graph
from src.services.extraction_service import (
    ExtractionRun,
    ExtractionSettings,
    extract_document,
    incomplete_by_kind,
    run_from_payload,
    run_to_payload,
)
from src.services.prompts import PromptMode
from src.services.synthetic import generate_corpus, write_corpus
from src.services.validation_service import report_lines, validate_graph

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BACKEND = 2

SEGMENTS_FILE = "segments.json"
EXTRACTION_FILE = "extraction.json"
CONSOLIDATED_FILE = "consolidated_graph.json"
VALIDATED_FILE = "validated_graph.json"
REPORT_FILE = "validation_report.jsonl"
METRICS_FILE = "metrics_summary.json"

PathLike = Union[str, Path]


def run_command(action: Callable[[], int]) -> int:
    """Run a command body and translate domain errors into exit codes"""
    try:
        return action()
    except (BackendError, ExtractionFailedError) as e:
        logger.error(f"Backend failure: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except RegKGError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"I/O error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


def apply_overrides(
    cfg: PipelineConfig,
    mode: Optional[str] = None,
    parallelism: Optional[int] = None,
    backend: Optional[str] = None,
    price_table: Optional[str] = None,
    out: Optional[str] = None,
) -> PipelineConfig:
    """Command-line flags win over the config file"""
    update: Dict[str, Any] = {}
    if mode:
        update["mode"] = PromptModeSetting(mode)
    if parallelism is not None:
        update["parallelism"] = parallelism
    if backend:
        update["backend"] = cfg.backend.model_copy(update={"kind": BackendKind(backend)})
    if price_table:
        update["price_table"] = price_table
    if out:
        update["output_dir"] = out
    return cfg.model_copy(update=update)


def open_backend(cfg: PipelineConfig) -> CompletionBackend:
    if cfg.backend.kind == BackendKind.REPLAY:
        init_db(cfg.backend.replay_database_url)
        return build_backend(cfg.backend, create_session)
    return build_backend(cfg.backend)


# === Artifact readers ===

def load_bundle(path: PathLike) -> DocumentBundle:
    data = read_json(path)
    try:
        return DocumentBundle(**data)
    except (TypeError, ValidationError) as e:
        raise ArtifactError(f"{path} is not a document bundle: {e}")


def load_segments(path: PathLike) -> Tuple[Dict[str, Any], List[Segment]]:
    payload = read_artifact(path, expected=SEGMENTS)
    try:
        segments = [Segment(**s) for s in payload.get("segments", [])]
    except (TypeError, ValidationError) as e:
        raise ArtifactError(f"{path}: malformed segment record: {e}")
    return payload, segments


def _fingerprint(settings: Dict[str, Any]) -> str:
    return sha256_text(json.dumps(settings, sort_keys=True, default=str))


def segmentation_fingerprint(cfg: PipelineConfig) -> str:
    return _fingerprint(cfg.segmentation.model_dump(mode="json"))


def extraction_fingerprint(cfg: PipelineConfig) -> str:
    """Settings that change what the extraction stage writes"""
    return _fingerprint({
        "mode": cfg.mode.value,
        "backend": cfg.backend.kind.value,
        "model": cfg.backend.model,
        "temperature": cfg.backend.temperature,
        "max_tokens": cfg.backend.max_tokens,
        "price_table": cfg.price_table,
    })


def is_current(output: Path, source: PathLike, artifact: str, fingerprint: Optional[str] = None) -> bool:
    """True when `output` already records `source`'s hash and, if given, the same config fingerprint"""
    if not output.exists():
        return False
    try:
        payload = read_artifact(output, expected=artifact)
    except ArtifactError:
        return False
    if payload["header"].get("input_sha256") != sha256_file(source):
        return False
    return fingerprint is None or payload.get("config_sha256") == fingerprint


def coverage_table(result: SegmentationResult) -> pd.DataFrame:
    rows = [
        {
            "segment": s.id,
            "title": s.title,
            "first_page": s.page_range[0],
            "last_page": s.page_range[1],
            "pages": s.page_range[1] - s.page_range[0] + 1,
            "chars": len(s.content),
        }
        for s in result.segments
    ]
    return pd.DataFrame(rows, columns=["segment", "title", "first_page", "last_page", "pages", "chars"])


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# === Stages ===

def run_segment(bundle_path: PathLike, out_path: PathLike, cfg: Optional[PipelineConfig] = None) -> SegmentationResult:
    cfg = cfg or PipelineConfig()
    bundle = load_bundle(bundle_path)
    result = segment_document(bundle, cfg.segmentation.thresholds())
    body = {
        "doc_id": result.doc_id,
        "title": result.title,
        "toc_page": result.toc_page,
        "entries": [e.model_dump(mode="json") for e in result.entries],
        "segments": [s.model_dump(mode="json") for s in result.segments],
        "warnings": list(result.warnings),
        "config_sha256": segmentation_fingerprint(cfg),
    }
    write_artifact(out_path, SEGMENTS, sha256_file(bundle_path), body)
    return result


def run_extract(
    segments_path: PathLike,
    out_path: PathLike,
    cfg: PipelineConfig,
    backend: Optional[CompletionBackend] = None,
    timestamps: bool = False,
) -> ExtractionRun:
    payload, segments = load_segments(segments_path)
    backend = backend or open_backend(cfg)
    ledger = CostLedger(price_table=load_price_table(cfg.price_table))
    settings = ExtractionSettings(
        mode=PromptMode(cfg.mode.value),
        model_name=cfg.backend.model,
        temperature=cfg.backend.temperature,
        max_tokens=cfg.backend.max_tokens,
    )
    started = _now()
    run = extract_document(
        segments,
        backend,
        settings,
        document_title=payload.get("title", ""),
        parallelism=cfg.parallelism,
        ledger=ledger,
        doc_id=payload.get("doc_id", ""),
    )
    stamps = {"started": started, "finished": _now()} if timestamps else None
    body = run_to_payload(run, [s.id for s in segments], stamps, ledger)
    body["incomplete_at_extraction"] = incomplete_by_kind(run.results)
    body["config_sha256"] = extraction_fingerprint(cfg)
    write_artifact(out_path, EXTRACTION, sha256_file(segments_path), body)
    return run


def run_consolidate(extraction_path: PathLike, out_path: PathLike) -> ConsolidationResult:
    payload = read_artifact(extraction_path, expected=EXTRACTION)
    run = run_from_payload(payload)
    result = consolidate(run.results, doc_id=run.doc_id)
    body = graph_payload(result.graph)
    body.update({
        "meta": payload.get("meta", {}),
        "resolution_map": result.resolution_map.model_dump(mode="json"),
        "warnings": list(result.warnings),
        "incomplete_at_extraction": payload.get("incomplete_at_extraction", {}),
    })
    if "cost_ledger" in payload:
        body["cost_ledger"] = payload["cost_ledger"]
    write_artifact(out_path, CONSOLIDATED, sha256_file(extraction_path), body)
    return result


def run_validate(
    graph_path: PathLike,
    out_dir: PathLike,
    cfg: PipelineConfig,
    backend: Optional[CompletionBackend] = None,
) -> Tuple[KnowledgeGraph, ValidationReport, MetricsSummary]:
    graph = load_graph(graph_path)
    payload = read_artifact(graph_path)
    price_table = load_price_table(cfg.price_table)
    if payload.get("cost_ledger"):
        ledger = CostLedger.from_dict(payload["cost_ledger"], price_table)
    else:
        ledger = CostLedger(price_table=price_table)

    backend = backend or open_backend(cfg)
    validated, report = validate_graph(
        graph,
        backend,
        parallelism=cfg.parallelism,
        model_name=cfg.backend.model,
        ledger=ledger,
        temperature=cfg.backend.temperature,
        max_tokens=cfg.backend.max_tokens,
    )
    summary = compute_summary(report, ledger, payload.get("incomplete_at_extraction"))

    out = Path(out_dir)
    source_hash = sha256_file(graph_path)
    validated_path = write_artifact(out / VALIDATED_FILE, VALIDATED, source_hash, {
        **graph_payload(validated),
        "cost_ledger": ledger.to_dict(),
    })
    header = {"record": "header", **make_header("validation_report", source_hash)}
    write_jsonl(out / REPORT_FILE, [header] + report_lines(report, summary.model_dump(mode="json")))
    write_artifact(out / METRICS_FILE, METRICS, sha256_file(validated_path), {
        "doc_id": report.doc_id,
        "metrics": summary.model_dump(mode="json"),
        "cost_ledger": ledger.to_dict(),
    })
    return validated, report, summary


# === Output ===

def print_summary(report: ValidationReport, summary: MetricsSummary) -> None:
    print(
        f"{report.doc_id}: {report.input_counts.entities}E/{report.input_counts.relationships}R -> "
        f"{report.output_counts.entities}E/{report.output_counts.relationships}R"
    )
    print(f"semantic_accuracy       {summary.semantic_accuracy:.1f}")
    print(f"schema_compliance       {summary.schema_compliance:.1f}")
    print(f"entity_retention        {summary.entity_retention:.1f}")
    print(f"relationship_retention  {summary.relationship_retention:.1f}")
    print(f"cost_waste_ratio        {summary.cost_waste_ratio:.1f}")
    print(f"total_cost              {summary.total_cost} ({summary.price_table_version})")
    print(f"cost_per_entity         {summary.cost_per_entity}")
    for flag in summary.flags:
        print(f"note: {flag}")


# === Commands ===

def cmd_segment(bundle_path: PathLike, out_path: PathLike, cfg: Optional[PipelineConfig] = None) -> int:
    def action() -> int:
        result = run_segment(bundle_path, out_path, cfg)
        print(f"{len(result.segments)} segments")
        print(coverage_table(result).to_string(index=False))
        for warning in result.warnings:
            print(f"warning: {warning}")
        return EXIT_OK
    return run_command(action)


def cmd_extract(
    segments_path: PathLike,
    out_path: PathLike,
    cfg: PipelineConfig,
    backend: Optional[CompletionBackend] = None,
    timestamps: bool = False,
) -> int:
    def action() -> int:
        run = run_extract(segments_path, out_path, cfg, backend, timestamps)
        print(
            f"{sum(len(r.entities) for r in run.results)} entities, "
            f"{sum(len(r.relationships) for r in run.results)} relationships, "
            f"{len(run.failures)} failed segments ({run.mode.value} mode)"
        )
        return EXIT_OK
    return run_command(action)


def cmd_consolidate(extraction_path: PathLike, out_path: PathLike) -> int:
    def action() -> int:
        result = run_consolidate(extraction_path, out_path)
        print(
            f"{len(result.graph.entities)} entities, {len(result.graph.relationships)} relationships, "
            f"{len(result.resolution_map)} aliases resolved"
        )
        return EXIT_OK
    return run_command(action)


def cmd_validate(
    graph_path: PathLike,
    out_dir: PathLike,
    cfg: PipelineConfig,
    backend: Optional[CompletionBackend] = None,
) -> int:
    def action() -> int:
        _, report, summary = run_validate(graph_path, out_dir, cfg, backend)
        print_summary(report, summary)
        return EXIT_OK
    return run_command(action)


def cmd_pipeline(
    bundle_path: PathLike,
    out_dir: PathLike,
    cfg: PipelineConfig,
    backend: Optional[CompletionBackend] = None,
    resume: bool = False,
    timestamps: bool = False,
) -> int:
    """
    segment -> extract -> consolidate -> validate in one directory.

    A failing stage stops the run; artifacts of completed stages stay. With
    `resume`, a stage whose output already records its input's hash and
    the current config fingerprint is skipped. Validation always runs.
    """
    def action() -> int:
        out = Path(out_dir)
        segments_path = out / SEGMENTS_FILE
        extraction_path = out / EXTRACTION_FILE
        consolidated_path = out / CONSOLIDATED_FILE

        if resume and is_current(segments_path, bundle_path, SEGMENTS, segmentation_fingerprint(cfg)):
            logger.info(f"Reusing {segments_path}")
        else:
            result = run_segment(bundle_path, segments_path, cfg)
            print(f"{len(result.segments)} segments")

        stage_backend = backend
        if resume and is_current(extraction_path, segments_path, EXTRACTION, extraction_fingerprint(cfg)):
            logger.info(f"Reusing {extraction_path}")
        else:
            stage_backend = stage_backend or open_backend(cfg)
            run_extract(segments_path, extraction_path, cfg, stage_backend, timestamps)

        if resume and is_current(consolidated_path, extraction_path, CONSOLIDATED):
            logger.info(f"Reusing {consolidated_path}")
        else:
            run_consolidate(extraction_path, consolidated_path)

        stage_backend = stage_backend or open_backend(cfg)
        _, report, summary = run_validate(consolidated_path, out, cfg, stage_backend)
        print_summary(report, summary)
        return EXIT_OK
    return run_command(action)


def cmd_export(graph_path: PathLike, fmt: str, out_path: PathLike) -> int:
    def action() -> int:
        target = export_graph(graph_path, fmt, out_path)
        print(f"wrote {target}")
        return EXIT_OK
    return run_command(action)


def cmd_synth(seed: int, n_entities: int, out_dir: PathLike) -> int:
    def action() -> int:
        corpus = generate_corpus(seed, n_entities)
        paths = write_corpus(corpus, out_dir)
        print(
            f"{corpus.doc_id}: {len(corpus.truth.entities)}E/{len(corpus.truth.relationships)}R "
            f"over {len(corpus.bundle.pages)} pages"
        )
        for name, path in sorted(paths.items()):
            print(f"  {name:<7} {path}")
        return EXIT_OK
    return run_command(action)
