"""Extraction and semantic-check prompts

The ontology prompt is assembled from nine components, every ontology fact
in it rendered from the schema registry. The baseline prompt is a short
template with no ontology vocabulary at all.
"""

import json
import re
from enum import Enum
from functools import lru_cache
from pathlib import Path
from string import Template
from typing import List, NamedTuple, Optional, Tuple

from src.domain.exceptions import EmptySegmentError
from src.domain.models import Entity, RawTable, Segment
from src.domain.ontology import SCHEMA, EntityKind, MeasurementType, MetricSubtype, OntologySchema

TEMPLATE_DIR = Path(__file__).parent / "templates"

SEGMENT_START = "$$$SEGMENT_START$$$"
SEGMENT_END = "$$$SEGMENT_END$$$"
BASELINE_CONTENT_MARKER = "Extract from this text:"


class PromptMode(str, Enum):
    ONTOLOGY = "ontology"
    BASELINE = "baseline"


# Component headings, in prompt order
COMPONENT_HEADINGS: Tuple[Tuple[str, str], ...] = (
    ("A", "[A] ROLE AND TASK"),
    ("B", "[B] CONNECTION MAP"),
    ("C", "[C] ENTITY DEFINITIONS"),
    ("D", "[D] STRUCTURAL RULES"),
    ("E", "[E] ID CONVENTIONS"),
    ("F", "[F] EXTRACTION WORKFLOW"),
    ("G", "[G] OUTPUT FORMAT"),
    ("H", "[H] WORKED EXAMPLES"),
    ("I", "[I] SEGMENT"),
)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return (TEMPLATE_DIR / name).read_text(encoding="utf-8")


def doc_slug(doc_id: str) -> str:
    """Lowercase token usable inside entity ids"""
    slug = re.sub(r"[^a-z0-9]+", "_", doc_id.lower()).strip("_")
    return slug or "doc"


# === Components ===

def _role() -> str:
    return (
        "You turn one section of an ESG regulatory standard into a small knowledge graph.\n"
        "Work only from the segment given at the end. Use only the entity kinds, metric "
        "subtypes and predicates defined below and return a single JSON object."
    )


def _connection_map(schema: OntologySchema) -> str:
    lines = [spec.render() for spec in schema.predicates]
    lines.append("")
    lines.append("No other predicates or entity kinds exist. Every entity takes part in at least one "
                 "of these relationships.")
    return "\n".join(lines)


def _entity_definitions(schema: OntologySchema) -> str:
    lines = ["Every entity carries: id, type, label, source {doc_id, page, start, end, quote}."]
    for kind in EntityKind:
        required = sorted(schema.required_fields(kind) - {"id", "type", "label", "source"})
        optional = sorted(schema.optional_fields(kind))
        parts = list(required) + [f"{name} (optional)" for name in optional]
        lines.append("")
        lines.append(f"{kind.value}: {schema.kind_definition(kind)}")
        lines.append(f"  fields: {', '.join(parts) if parts else 'none beyond the shared ones'}")
        if kind == EntityKind.METRIC:
            lines.append(f"  metric_type is one of: {', '.join(s.value for s in MetricSubtype)}")
            lines.append(f"  measurement_type is one of: {', '.join(m.value for m in MeasurementType)}")
    return "\n".join(lines)


def _rules(schema: OntologySchema) -> str:
    return "\n".join(f"({rule.index}) {rule.description}" for rule in schema.rules)


def _id_conventions(schema: OntologySchema, segment: Segment) -> str:
    slug = doc_slug(segment.doc_id or "doc")
    page = max(segment.page_range[0], 1)
    example = schema.make_entity_id(EntityKind.METRIC, slug, page, 1)
    prefixes = ", ".join(f"{kind.value} → {prefix}" for kind, prefix in schema.id_prefixes.items())
    return (
        "Ids have the form <prefix>_<doc_slug>_<page>_<nn>: lowercase, the page where the entity "
        "is stated, and a two-digit running number.\n"
        f"Prefixes: {prefixes}\n"
        f"doc_slug for this document: {slug}\n"
        f"Example: {example}\n"
        "Reuse an id whenever the same entity is mentioned again; never give two entities the same id."
    )


def _workflow() -> str:
    return (
        "Step 1. Context and categories: find the Industry and ReportingFramework this section belongs to and "
        "turn section headings into Categories. Link Industry → ReportUsing → ReportingFramework and "
        "ReportingFramework → Include → Category.\n"
        "Step 2. Metrics: find every metric, decide its subtype (DirectMetric reported as is, CalculatedMetric "
        "derived by a formula, InputMetric used as a formula variable) and link Category → ConsistOf → Metric.\n"
        "Step 3. Models: for every formula or calculation create a Model with its equation and input_variables. "
        "Link CalculatedMetric → IsCalculatedBy → Model and Model → RequiresInputFrom → InputMetric.\n"
        "Step 4. Check before answering: as many IsCalculatedBy links as CalculatedMetrics, at least one "
        "RequiresInputFrom per Model, a unit on every Quantitative metric, no orphans."
    )


def _output_format() -> str:
    schema = {
        "entities": [{
            "id": "string",
            "type": "Industry | ReportingFramework | Category | Metric | Model",
            "metric_type": "DirectMetric | CalculatedMetric | InputMetric (Metric only)",
            "label": "string",
            "description": "string",
            "<kind fields>": "see the entity definitions",
            "source": {"doc_id": "string", "page": "integer", "start": "integer", "end": "integer",
                       "quote": "short verbatim excerpt"},
        }],
        "relationships": [{
            "subject": "entity id",
            "predicate": "one of the connection map predicates",
            "object": "entity id",
        }],
    }
    return "Return exactly one JSON object, no prose and no code fences:\n" + json.dumps(schema, indent=2)


def _examples() -> str:
    parts = []
    for title, name in (("Metric extraction", "few_shot_metric.json"), ("Model extraction", "few_shot_model.json")):
        example = json.loads(load_template(name))
        parts.append(f"{title}:\n{json.dumps(example, indent=2, ensure_ascii=False)}")
    return "\n\n".join(parts)


def render_table(table: RawTable) -> str:
    rows = ([table.header] if table.header else []) + table.rows
    return f"(page {table.page})\n" + "\n".join(" | ".join(cell.strip() for cell in row) for row in rows)


def _segment_block(segment: Segment, document_title: str) -> str:
    lines = [
        f"Document: {document_title or segment.doc_id} ({segment.doc_id})",
        f"Segment: {segment.id} {segment.section_number} {segment.title}".replace("  ", " "),
        f"Pages: {segment.page_range[0]}-{segment.page_range[1]}",
    ]
    if segment.tables:
        lines.append("Tables in this segment:")
        lines.extend(render_table(t) for t in segment.tables)
    lines.append("Only the segment text below and the tables listed above may be used.")
    lines.append(SEGMENT_START)
    lines.append(segment.content)
    lines.append(SEGMENT_END)
    return "\n".join(lines)


# === Builders ===

def build_ontology_prompt(
    segment: Segment,
    document_title: str = "",
    schema: OntologySchema = SCHEMA,
) -> str:
    if not segment.content.strip():
        raise EmptySegmentError(f"Segment {segment.id} has no content")
    bodies = {
        "A": _role(),
        "B": _connection_map(schema),
        "C": _entity_definitions(schema),
        "D": _rules(schema),
        "E": _id_conventions(schema, segment),
        "F": _workflow(),
        "G": _output_format(),
        "H": _examples(),
        "I": _segment_block(segment, document_title),
    }
    return "\n\n".join(f"{heading}\n{bodies[key]}" for key, heading in COMPONENT_HEADINGS) + "\n"


def build_baseline_prompt(segment: Segment, document_title: str = "") -> str:
    if not segment.content.strip():
        raise EmptySegmentError(f"Segment {segment.id} has no content")
    return Template(load_template("baseline.txt")).substitute(
        document_name=document_title or segment.doc_id,
        section_title=segment.title,
        content=segment.content,
    )


def build_prompt(segment: Segment, mode: PromptMode, document_title: str = "", schema: OntologySchema = SCHEMA) -> str:
    if PromptMode(mode) == PromptMode.BASELINE:
        return build_baseline_prompt(segment, document_title)
    return build_ontology_prompt(segment, document_title, schema)


def segment_text_from_prompt(prompt: str) -> Optional[str]:
    """Recover the segment content an extraction prompt was built from"""
    start = prompt.find(SEGMENT_START)
    end = prompt.find(SEGMENT_END)
    if start != -1 and end > start:
        return prompt[start + len(SEGMENT_START) + 1:end - 1]
    idx = prompt.find(BASELINE_CONTENT_MARKER)
    if idx != -1:
        text = prompt[idx + len(BASELINE_CONTENT_MARKER) + 1:]
        return text[:-1] if text.endswith("\n") else text
    return None


def prompt_mode_of(prompt: str) -> Optional[PromptMode]:
    if SEGMENT_START in prompt:
        return PromptMode.ONTOLOGY
    if BASELINE_CONTENT_MARKER in prompt:
        return PromptMode.BASELINE
    return None


# === Semantic check ===

def _one_line(text: str) -> str:
    return " ".join((text or "").split())


def build_semantic_prompt(entity: Entity, schema: OntologySchema = SCHEMA) -> str:
    return Template(load_template("semantic_check.txt")).substitute(
        kind=entity.kind,
        definition=schema.kind_definition(entity.kind),
        entity_id=entity.id,
        label=_one_line(entity.label),
        description=_one_line(entity.description) or "(none)",
    )


class SemanticQuery(NamedTuple):
    kind: str
    entity_id: str
    label: str


_SEMANTIC_RE = re.compile(
    r"^Entity kind: (?P<kind>[^\n]*)$.*?^Entity id: (?P<entity_id>[^\n]*)\nLabel: (?P<label>[^\n]*)$",
    re.MULTILINE | re.DOTALL,
)


def parse_semantic_prompt(prompt: str) -> Optional[SemanticQuery]:
    """Fields of a semantic-check prompt, or None for any other prompt"""
    match = _SEMANTIC_RE.search(prompt)
    if not match:
        return None
    return SemanticQuery(match.group("kind").strip(), match.group("entity_id").strip(), match.group("label").strip())


_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def parse_verdict(text: str) -> Optional[bool]:
    """True/False for a yes/no verdict, None when the answer is unreadable"""
    body = _FENCE_RE.sub("", (text or "").strip()).strip()
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        verdict = data.get("verdict", data.get("valid"))
        if isinstance(verdict, bool):
            return verdict
        if isinstance(verdict, str):
            body = verdict
        else:
            return None
    word = body.strip().lower().split()[0].strip(".,!\"'") if body.strip() else ""
    if word in ("yes", "true", "valid"):
        return True
    if word in ("no", "false", "invalid"):
        return False
    return None


def rendered_components(prompt: str) -> List[str]:
    """Component keys found in a prompt, in the order they appear"""
    found = [(prompt.find(heading), key) for key, heading in COMPONENT_HEADINGS if heading in prompt]
    return [key for _, key in sorted(found)]
