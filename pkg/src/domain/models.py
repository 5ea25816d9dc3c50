"""Records shared by every stage: documents, segments, graph elements, reports"""

from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .ontology import EntityKind, MetricSubtype

SCHEMA_VERSION = "1.0"


# === Documents ===

class RawTable(BaseModel):
    """A table as it was extracted from one page"""
    page: int
    header: List[str] = []
    rows: List[List[str]] = []
    continuation_hint: bool = False

    @property
    def arity(self) -> int:
        if self.header:
            return len(self.header)
        return len(self.rows[0]) if self.rows else 0

    @model_validator(mode="after")
    def _rows_match_header(self):
        if self.header:
            for row in self.rows:
                if len(row) != len(self.header):
                    raise ValueError(
                        f"Table on page {self.page}: row arity {len(row)} != header arity {len(self.header)}"
                    )
        return self


class Page(BaseModel):
    """One pre-extracted page"""
    number: int = Field(ge=1)
    text: str = ""
    tables: List[RawTable] = []


class DocumentBundle(BaseModel):
    """Page-structured input document"""
    doc_id: str
    title: str = ""
    pages: List[Page]

    @field_validator("pages")
    @classmethod
    def _pages_contiguous(cls, pages: List[Page]) -> List[Page]:
        for expected, page in enumerate(pages, start=1):
            if page.number != expected:
                raise ValueError(f"Pages must be numbered 1..n contiguously; found {page.number} at position {expected}")
        return pages

    @property
    def last_page(self) -> int:
        return len(self.pages)

    def page(self, number: int) -> Optional[Page]:
        if 1 <= number <= len(self.pages):
            return self.pages[number - 1]
        return None


class TocEntry(BaseModel):
    """A table-of-contents line resolved to a page span"""
    number: str = ""
    title: str
    start_page: int
    end_page: int

    @model_validator(mode="after")
    def _ordered_span(self):
        if self.start_page > self.end_page:
            raise ValueError(f"TOC entry {self.title!r}: start_page {self.start_page} > end_page {self.end_page}")
        return self


class Segment(BaseModel):
    """One TOC-aligned unit of a document"""
    id: str
    doc_id: str = ""
    title: str
    section_number: str = ""
    page_range: Tuple[int, int]
    content: str = ""
    tables: List[RawTable] = []
    warnings: List[str] = []


# === Graph elements ===

class Provenance(BaseModel):
    """Link from a graph element back to its source segment"""
    doc_id: str
    segment_id: str
    segment_title: str = ""
    page_range: Tuple[int, int]
    quote: Optional[str] = None
    start: Optional[int] = None
    end: Optional[int] = None


class Entity(BaseModel):
    """A graph node. `kind` is kept verbatim so unknown kinds survive to validation."""
    id: str
    kind: str
    metric_subtype: Optional[str] = None
    label: str = ""
    description: str = ""
    properties: Dict[str, Any] = {}
    provenance: List[Provenance] = []
    incomplete: bool = False

    @property
    def known_kind(self) -> Optional[EntityKind]:
        try:
            return EntityKind(self.kind)
        except ValueError:
            return None

    @property
    def known_subtype(self) -> Optional[MetricSubtype]:
        if self.metric_subtype is None:
            return None
        try:
            return MetricSubtype(self.metric_subtype)
        except ValueError:
            return None

    def field_value(self, name: str) -> Any:
        """Value of a schema field, wherever the record stores it"""
        if name == "id":
            return self.id
        if name == "type":
            return self.kind
        if name == "label":
            return self.label
        if name == "source":
            return self.provenance
        if name == "description":
            return self.description or self.properties.get("description")
        if name == "metric_type":
            return self.metric_subtype
        return self.properties.get(name)


class Relationship(BaseModel):
    """A (subject, predicate, object) triple with provenance"""
    subject: str
    predicate: str
    object: str
    provenance: List[Provenance] = []

    @property
    def triple(self) -> Tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)


class TokenUsage(BaseModel):
    """Input/output token counts"""
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
        )

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


class ExtractionResult(BaseModel):
    """Outcome of extracting one segment"""
    segment_id: str
    entities: List[Entity] = []
    relationships: List[Relationship] = []
    quality_flags: List[str] = []
    token_usage: TokenUsage = Field(default_factory=TokenUsage)
    failed: bool = False
    error: Optional[str] = None


class GraphStage(str, Enum):
    RAW = "raw"
    CONSOLIDATED = "consolidated"
    VALIDATED = "validated"


class KnowledgeGraph(BaseModel):
    """G = (E, R) at one pipeline stage"""
    doc_id: str = ""
    stage: GraphStage = GraphStage.RAW
    entities: List[Entity] = []
    relationships: List[Relationship] = []

    def entity_ids(self) -> List[str]:
        return [e.id for e in self.entities]

    def entity_index(self) -> Dict[str, Entity]:
        """id -> first entity carrying it"""
        index: Dict[str, Entity] = {}
        for entity in self.entities:
            index.setdefault(entity.id, entity)
        return index

    def has_unique_ids(self) -> bool:
        ids = self.entity_ids()
        return len(ids) == len(set(ids))

    def has_closed_endpoints(self) -> bool:
        ids = set(self.entity_ids())
        return all(r.subject in ids and r.object in ids for r in self.relationships)


# === Validation ===

class RuleId(str, Enum):
    SEM = "SEM"
    VR001 = "VR001"
    VR002 = "VR002"
    VR003 = "VR003"
    VR004 = "VR004"
    VR005 = "VR005"
    VR006 = "VR006"


SCHEMA_RULES: Tuple[RuleId, ...] = (
    RuleId.VR001, RuleId.VR002, RuleId.VR003, RuleId.VR004, RuleId.VR005, RuleId.VR006,
)


class TargetKind(str, Enum):
    ENTITY = "entity"
    RELATIONSHIP = "relationship"


class Violation(BaseModel):
    """A logged removal reason"""
    rule_id: RuleId
    target_id: str
    target_kind: TargetKind
    detail: str
    provenance: List[Provenance] = []
    target_index: Optional[int] = None  # position in the snapshot, disambiguates duplicate ids
    round: int = 1


class RulePass(BaseModel):
    passed: int = 0
    total: int = 0

    @property
    def vacuous(self) -> bool:
        return self.total == 0


class CascadeRecord(BaseModel):
    """A relationship dropped because an endpoint was removed"""
    subject: str
    predicate: str
    object: str
    phase: int
    removed_endpoint: str


class EntityCounts(BaseModel):
    entities: int = 0
    relationships: int = 0


class StructuralFinding(BaseModel):
    """Advisory result of one of the seven structural rules (never removes anything)"""
    rule_index: int
    checker_id: str
    offenders: List[str] = []


class ValidationReport(BaseModel):
    """Everything Stage 3 did, in enough detail to recompute the metrics"""
    doc_id: str = ""
    input_counts: EntityCounts = Field(default_factory=EntityCounts)
    phase1_removed: List[Violation] = []
    phase2_removed: List[Violation] = []
    cascaded: List[CascadeRecord] = []
    per_rule_pass: Dict[str, RulePass] = {}
    vacuous_rules: List[str] = []
    output_counts: EntityCounts = Field(default_factory=EntityCounts)
    semantic_calls: int = 0
    token_usage: TokenUsage = Field(default_factory=TokenUsage)
    unverifiable: List[str] = []
    input_kind_counts: Dict[str, int] = {}
    output_kind_counts: Dict[str, int] = {}
    structural_findings: List[StructuralFinding] = []

    def removed_entity_count(self) -> int:
        return sum(1 for v in self.phase1_removed + self.phase2_removed if v.target_kind == TargetKind.ENTITY)

    def removed_relationship_count(self) -> int:
        direct = sum(1 for v in self.phase2_removed if v.target_kind == TargetKind.RELATIONSHIP)
        return direct + len(self.cascaded)

    def accounting_holds(self) -> bool:
        return (
            self.input_counts.entities - self.removed_entity_count() == self.output_counts.entities
            and self.input_counts.relationships - self.removed_relationship_count()
            == self.output_counts.relationships
        )
