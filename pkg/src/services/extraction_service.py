"""Stage 2: ontology-guided (or baseline) extraction per segment"""

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from src.domain.exceptions import BackendAuthError, BackendError, ExtractionFailedError, ParseFailureError
from src.domain.metrics import CostLedger
from src.domain.models import Entity, ExtractionResult, Provenance, Relationship, Segment, TokenUsage
from src.domain.ontology import SCHEMA, OntologySchema
from src.domain.rules import missing_fields
from src.services.completion import CompletionBackend, CompletionRequest
from src.services.prompts import PromptMode, build_prompt

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",\s*([\]}])")

# Keys mapped onto Entity attributes rather than properties
_ENTITY_KEYS = {"id", "type", "kind", "metric_type", "subtype", "label", "description", "source"}


@dataclass
class ExtractionSettings:
    mode: PromptMode = PromptMode.ONTOLOGY
    model_name: str = ""
    temperature: float = 0.1
    max_tokens: int = 16000


@dataclass
class ParsedExtraction:
    entities: List[Entity]
    relationships: List[Relationship]
    meta: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


@dataclass
class ExtractionRun:
    """All per-segment results of one document, in segment order"""
    doc_id: str
    title: str
    mode: PromptMode
    model_name: str
    results: List[ExtractionResult]

    @property
    def token_usage(self) -> TokenUsage:
        total = TokenUsage()
        for result in self.results:
            total = total + result.token_usage
        return total

    @property
    def failures(self) -> List[ExtractionResult]:
        return [r for r in self.results if r.failed]


# === Parsing ===

def _load_payload(body: str) -> Tuple[Any, bool]:
    text = (body or "").strip()
    try:
        return json.loads(text), False
    except json.JSONDecodeError:
        pass

    # single repair: unwrap fences, keep the outermost object, drop trailing commas
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1).strip()
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise ParseFailureError("No JSON object in response")
    candidate = _TRAILING_COMMA_RE.sub(r"\1", text[start:end + 1])
    try:
        return json.loads(candidate), True
    except json.JSONDecodeError as e:
        raise ParseFailureError(f"Malformed JSON after repair: {e}")


def _provenance(segment: Segment, source: Any) -> Provenance:
    page_range = tuple(segment.page_range)
    quote, start, end = None, None, None
    if isinstance(source, dict):
        page = source.get("page")
        if isinstance(page, int) and segment.page_range[0] <= page <= segment.page_range[1]:
            page_range = (page, page)
        quote = source.get("quote") if isinstance(source.get("quote"), str) else None
        start = source.get("start") if isinstance(source.get("start"), int) else None
        end = source.get("end") if isinstance(source.get("end"), int) else None
    return Provenance(
        doc_id=segment.doc_id,
        segment_id=segment.id,
        segment_title=segment.title,
        page_range=page_range,
        quote=quote,
        start=start,
        end=end,
    )


def _text(value: Any) -> str:
    if value is None:
        return ""
    return value if isinstance(value, str) else str(value)


def parse_extraction_json(body: str, segment: Segment, schema: OntologySchema = SCHEMA) -> ParsedExtraction:
    """
    Map a response payload onto entities and relationships.

    Kinds are kept verbatim. Unrecognised keys become properties. Self-loops
    are dropped with a warning.
    """
    payload, repaired = _load_payload(body)
    if not isinstance(payload, dict):
        raise ParseFailureError(f"Top-level JSON value is a {type(payload).__name__}, expected an object")
    raw_entities = payload.get("entities", [])
    raw_relationships = payload.get("relationships", [])
    if not isinstance(raw_entities, list) or not isinstance(raw_relationships, list):
        raise ParseFailureError("'entities' and 'relationships' must be lists")

    warnings: List[str] = []
    if repaired:
        warnings.append("Response needed repair before parsing")

    entities: List[Entity] = []
    for item in raw_entities:
        if not isinstance(item, dict) or not _text(item.get("id")).strip():
            warnings.append(f"Skipped entity record without id: {str(item)[:80]}")
            continue
        subtype = _text(item.get("metric_type", item.get("subtype"))).strip()
        entity = Entity(
            id=_text(item["id"]).strip(),
            kind=_text(item.get("type", item.get("kind"))).strip(),
            metric_subtype=subtype or None,
            label=_text(item.get("label")).strip(),
            description=_text(item.get("description")).strip(),
            properties={k: v for k, v in item.items() if k not in _ENTITY_KEYS},
            provenance=[_provenance(segment, item.get("source"))],
        )
        entity.incomplete = bool(missing_fields(entity, schema))
        entities.append(entity)

    relationships: List[Relationship] = []
    for item in raw_relationships:
        if not isinstance(item, dict):
            warnings.append(f"Skipped relationship record: {str(item)[:80]}")
            continue
        subject, predicate, obj = (_text(item.get(k)).strip() for k in ("subject", "predicate", "object"))
        if not (subject and predicate and obj):
            warnings.append(f"Skipped incomplete relationship {subject!r} {predicate!r} {obj!r}")
            continue
        if subject == obj:
            message = f"Dropped self-loop {subject} -{predicate}-> {obj}"
            logger.warning(message)
            warnings.append(message)
            continue
        relationships.append(Relationship(
            subject=subject,
            predicate=predicate,
            object=obj,
            provenance=[_provenance(segment, item.get("source"))],
        ))

    meta = {k: v for k, v in payload.items() if k not in ("entities", "relationships")}
    meta["repaired"] = repaired
    return ParsedExtraction(entities=entities, relationships=relationships, meta=meta, warnings=warnings)


# === Quality check ===

def quality_check(
    result: ExtractionResult,
    schema: OntologySchema = SCHEMA,
    prior_ids: Iterable[str] = (),
) -> List[str]:
    """Warnings only; Stage 3 decides what is removed"""
    warnings: List[str] = []
    if not result.entities:
        warnings.append("No entities extracted")
    for entity in result.entities:
        if not schema.is_known_kind(entity.kind):
            warnings.append(f"Unknown entity kind {entity.kind!r} on {entity.id}")
            continue
        missing = missing_fields(entity, schema)
        if missing:
            warnings.append(f"{entity.id} missing required fields: {', '.join(missing)}")
    known: Set[str] = set(prior_ids) | {e.id for e in result.entities}
    for rel in result.relationships:
        for endpoint in (rel.subject, rel.object):
            if endpoint not in known:
                warnings.append(f"{rel.subject} -{rel.predicate}-> {rel.object} references unknown id {endpoint}")
    return warnings


# === Extraction ===

def _failed(segment: Segment, error: str, usage: TokenUsage) -> ExtractionResult:
    logger.warning(f"Segment {segment.id} failed: {error}")
    return ExtractionResult(segment_id=segment.id, failed=True, error=error, token_usage=usage)


def extract_segment(
    segment: Segment,
    backend: CompletionBackend,
    settings: ExtractionSettings = ExtractionSettings(),
    document_title: str = "",
    schema: OntologySchema = SCHEMA,
    prior_ids: Optional[Iterable[str]] = (),
) -> ExtractionResult:
    """
    One prompt, one completion, parse, provenance, quality check.

    An unparseable answer is re-requested once; a second failure marks the
    segment failed. Authentication errors propagate, other backend errors
    fail the segment. `prior_ids=None` skips the quality check.
    """
    if not segment.content.strip():
        return _failed(segment, "Segment has no content", TokenUsage())

    prompt = build_prompt(segment, settings.mode, document_title, schema)
    request = CompletionRequest(
        prompt=prompt,
        temperature=settings.temperature,
        max_tokens=settings.max_tokens,
        model_name=settings.model_name,
    )

    usage = TokenUsage()
    last_error = ""
    for attempt in (1, 2):
        try:
            response = backend.complete(request)
        except BackendAuthError:
            raise
        except BackendError as e:
            return _failed(segment, f"Backend error: {e}", usage)
        usage = usage + response.usage
        try:
            parsed = parse_extraction_json(response.text, segment, schema)
        except ParseFailureError as e:
            last_error = str(e)
            logger.warning(f"Segment {segment.id}: unparseable response (attempt {attempt}): {e}")
            continue

        result = ExtractionResult(
            segment_id=segment.id,
            entities=parsed.entities,
            relationships=parsed.relationships,
            quality_flags=parsed.warnings,
            token_usage=usage,
        )
        if prior_ids is not None:
            result.quality_flags.extend(quality_check(result, schema, prior_ids))
        return result

    return _failed(segment, f"Parse failure: {last_error}", usage)


def extract_document(
    segments: Sequence[Segment],
    backend: CompletionBackend,
    settings: ExtractionSettings = ExtractionSettings(),
    document_title: str = "",
    schema: OntologySchema = SCHEMA,
    parallelism: int = 1,
    ledger: Optional[CostLedger] = None,
    doc_id: str = "",
) -> ExtractionRun:
    """
    Extract every segment with bounded fan-out; results keep segment order.

    Quality flags are computed after collection so that "prior segment" means
    document order, not completion order.
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    def work(segment: Segment) -> ExtractionResult:
        return extract_segment(segment, backend, settings, document_title, schema, prior_ids=None)

    if parallelism == 1:
        results = [work(s) for s in segments]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, segments))

    seen: Set[str] = set()
    for result in results:
        if not result.failed:
            result.quality_flags.extend(quality_check(result, schema, seen))
        seen.update(e.id for e in result.entities)
        for flag in result.quality_flags:
            logger.warning(f"[{result.segment_id}] {flag}")

    run = ExtractionRun(
        doc_id=doc_id or (segments[0].doc_id if segments else ""),
        title=document_title,
        mode=PromptMode(settings.mode),
        model_name=settings.model_name,
        results=results,
    )
    if ledger is not None:
        ledger.add_stage2(run.token_usage, settings.model_name)

    succeeded = len(results) - len(run.failures)
    logger.info(
        f"Extracted {sum(len(r.entities) for r in results)}E/{sum(len(r.relationships) for r in results)}R "
        f"from {succeeded}/{len(results)} segments ({run.token_usage.total_tokens} tokens)"
    )
    if succeeded == 0:
        raise ExtractionFailedError(f"All {len(results)} segments failed extraction")
    return run


def incomplete_by_kind(results: Iterable[ExtractionResult]) -> Dict[str, int]:
    """Entities flagged incomplete at extraction, per kind"""
    counts: Dict[str, int] = {}
    for result in results:
        for entity in result.entities:
            if entity.incomplete:
                counts[entity.kind] = counts.get(entity.kind, 0) + 1
    return counts


# === Extraction file ===

def run_to_payload(run: ExtractionRun, segment_ids: Sequence[str], timestamps: Optional[Dict[str, str]] = None,
                   ledger: Optional[CostLedger] = None) -> Dict[str, Any]:
    meta: Dict[str, Any] = {
        "doc_id": run.doc_id,
        "title": run.title,
        "mode": run.mode.value,
        "model": run.model_name,
        "segment_ids": list(segment_ids),
    }
    if timestamps:
        meta["timestamps"] = timestamps
    body: Dict[str, Any] = {
        "meta": meta,
        "entities": [e.model_dump(mode="json") for r in run.results for e in r.entities],
        "relationships": [rel.model_dump(mode="json") for r in run.results for rel in r.relationships],
        "failures": [{"segment_id": r.segment_id, "error": r.error} for r in run.failures],
        "quality_flags": {r.segment_id: list(r.quality_flags) for r in run.results},
        "token_usage": run.token_usage.model_dump(),
        "per_segment_usage": {r.segment_id: r.token_usage.model_dump() for r in run.results},
    }
    if ledger is not None:
        body["cost_ledger"] = ledger.to_dict()
    return body


def run_from_payload(payload: Dict[str, Any]) -> ExtractionRun:
    """Regroup a flattened extraction file into per-segment results"""
    meta = payload.get("meta", {})
    segment_ids: List[str] = list(meta.get("segment_ids", []))
    failures = {f["segment_id"]: f.get("error") for f in payload.get("failures", [])}
    usage = payload.get("per_segment_usage", {})
    flags = payload.get("quality_flags", {})

    grouped: Dict[str, ExtractionResult] = {}
    for seg_id in segment_ids:
        grouped[seg_id] = ExtractionResult(
            segment_id=seg_id,
            failed=seg_id in failures,
            error=failures.get(seg_id),
            quality_flags=list(flags.get(seg_id, [])),
            token_usage=TokenUsage(**usage.get(seg_id, {})),
        )

    def bucket(seg_id: str) -> ExtractionResult:
        if seg_id not in grouped:
            grouped[seg_id] = ExtractionResult(segment_id=seg_id)
        return grouped[seg_id]

    for raw in payload.get("entities", []):
        entity = Entity(**raw)
        bucket(entity.provenance[0].segment_id if entity.provenance else "").entities.append(entity)
    for raw in payload.get("relationships", []):
        rel = Relationship(**raw)
        bucket(rel.provenance[0].segment_id if rel.provenance else "").relationships.append(rel)

    return ExtractionRun(
        doc_id=meta.get("doc_id", ""),
        title=meta.get("title", ""),
        mode=PromptMode(meta.get("mode", PromptMode.ONTOLOGY.value)),
        model_name=meta.get("model", ""),
        results=list(grouped.values()),
    )
