"""ESG metric knowledge-graph schema registry

The registry is the single definition shared by the extraction prompt,
the semantic checker and the rule validators.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Dict, FrozenSet, Mapping, Optional, Tuple, Union

from .exceptions import InvalidArgumentError


class EntityKind(str, Enum):
    """The five entity kinds"""
    INDUSTRY = "Industry"
    REPORTING_FRAMEWORK = "ReportingFramework"
    CATEGORY = "Category"
    METRIC = "Metric"
    MODEL = "Model"


class MetricSubtype(str, Enum):
    """Subtype carried only by Metric entities"""
    DIRECT = "DirectMetric"
    CALCULATED = "CalculatedMetric"
    INPUT = "InputMetric"


class Predicate(str, Enum):
    """The five relationship predicates"""
    REPORT_USING = "ReportUsing"
    INCLUDE = "Include"
    CONSIST_OF = "ConsistOf"
    IS_CALCULATED_BY = "IsCalculatedBy"
    REQUIRES_INPUT_FROM = "RequiresInputFrom"


class MeasurementType(str, Enum):
    QUANTITATIVE = "Quantitative"
    QUALITATIVE = "Qualitative"


@dataclass(frozen=True)
class PredicateSpec:
    """Legal subject/object pattern of one predicate"""
    predicate: Predicate
    subject_kind: EntityKind
    object_kind: EntityKind
    subject_subtype: Optional[MetricSubtype] = None  # None = any subtype
    object_subtype: Optional[MetricSubtype] = None

    @property
    def subject_label(self) -> str:
        return self.subject_subtype.value if self.subject_subtype else self.subject_kind.value

    @property
    def object_label(self) -> str:
        return self.object_subtype.value if self.object_subtype else self.object_kind.value

    def render(self) -> str:
        return f"{self.subject_label} → {self.predicate.value} → {self.object_label}"


@dataclass(frozen=True)
class StructuralRule:
    """One of the seven structural rules the prompt states"""
    index: int
    description: str
    checker_id: str


@dataclass(frozen=True)
class FieldSpec:
    """A field of an entity kind"""
    entity_kind: EntityKind
    field_name: str
    required: bool


SHARED_FIELDS: Tuple[str, ...] = ("id", "type", "label", "source")

_KIND_FIELDS: Dict[EntityKind, Tuple[Tuple[str, bool], ...]] = {
    EntityKind.INDUSTRY: (
        ("sector", False),
        ("country", False),
        ("standard_reference", False),
    ),
    EntityKind.REPORTING_FRAMEWORK: (
        ("name", True),
        ("version", False),
        ("year", False),
        ("publisher", False),
    ),
    EntityKind.CATEGORY: (
        ("section_title", True),
        ("section_id", False),
        ("page_range", False),
    ),
    EntityKind.METRIC: (
        ("measurement_type", True),
        ("metric_type", True),
        ("unit", True),
        ("code", True),
        ("description", True),
        ("disaggregations", False),
    ),
    EntityKind.MODEL: (
        ("description", True),
        ("equation", True),
        ("input_variables", True),
    ),
}

ID_PREFIXES: Dict[EntityKind, str] = {
    EntityKind.INDUSTRY: "industry",
    EntityKind.REPORTING_FRAMEWORK: "framework",
    EntityKind.CATEGORY: "category",
    EntityKind.METRIC: "metric",
    EntityKind.MODEL: "model",
}

KIND_DEFINITIONS: Dict[EntityKind, str] = {
    EntityKind.INDUSTRY: (
        "An industry or sector whose companies report sustainability information "
        "under a standard, e.g. Commercial Banks or Semiconductors."
    ),
    EntityKind.REPORTING_FRAMEWORK: (
        "A named disclosure standard or framework that prescribes what to report, "
        "e.g. a SASB industry standard, IFRS S2 or the TCFD recommendations."
    ),
    EntityKind.CATEGORY: (
        "A disclosure topic that groups related metrics, usually a section heading "
        "such as Data Security or Greenhouse Gas Emissions."
    ),
    EntityKind.METRIC: (
        "A sustainability (ESG) quantity or qualitative disclosure that a reporting "
        "company must report, normally with an accounting code and a unit. Generic "
        "financial performance figures are not ESG metrics."
    ),
    EntityKind.MODEL: (
        "A calculation method: an equation with named input variables that produces "
        "a calculated metric."
    ),
}

_SLUG_RE = re.compile(r"^[a-z0-9][a-z0-9_]*$")


def _coerce_kind(kind: Union[EntityKind, str, None]) -> Optional[EntityKind]:
    if isinstance(kind, EntityKind):
        return kind
    try:
        return EntityKind(kind)
    except ValueError:
        return None


def _coerce_subtype(subtype: Union[MetricSubtype, str, None]) -> Optional[MetricSubtype]:
    if subtype is None or isinstance(subtype, MetricSubtype):
        return subtype
    try:
        return MetricSubtype(subtype)
    except ValueError:
        return None


@dataclass(frozen=True)
class OntologySchema:
    """Immutable registry of kinds, predicates, fields and rules"""
    predicates: Tuple[PredicateSpec, ...]
    rules: Tuple[StructuralRule, ...]
    fields: Tuple[FieldSpec, ...]
    id_prefixes: Mapping[EntityKind, str] = field(default_factory=lambda: MappingProxyType(dict(ID_PREFIXES)))
    kind_definitions: Mapping[EntityKind, str] = field(default_factory=lambda: MappingProxyType(dict(KIND_DEFINITIONS)))

    @property
    def kinds(self) -> Tuple[EntityKind, ...]:
        return tuple(EntityKind)

    def is_known_kind(self, kind: Union[EntityKind, str, None]) -> bool:
        return _coerce_kind(kind) is not None

    def predicate_spec(self, predicate: Union[Predicate, str]) -> Optional[PredicateSpec]:
        name = predicate.value if isinstance(predicate, Predicate) else predicate
        for spec in self.predicates:
            if spec.predicate.value == name:
                return spec
        return None

    def predicate_is_legal(
        self,
        subject_kind: Union[EntityKind, str, None],
        predicate: Union[Predicate, str],
        object_kind: Union[EntityKind, str, None],
        subject_subtype: Union[MetricSubtype, str, None] = None,
        object_subtype: Union[MetricSubtype, str, None] = None,
    ) -> bool:
        """True iff the triple pattern is in the connection map, subtype constraints included"""
        spec = self.predicate_spec(predicate)
        if spec is None:
            return False
        s_kind, o_kind = _coerce_kind(subject_kind), _coerce_kind(object_kind)
        if s_kind != spec.subject_kind or o_kind != spec.object_kind:
            return False
        if spec.subject_subtype and _coerce_subtype(subject_subtype) != spec.subject_subtype:
            return False
        if spec.object_subtype and _coerce_subtype(object_subtype) != spec.object_subtype:
            return False
        return True

    def field_specs(self, kind: Union[EntityKind, str]) -> Tuple[FieldSpec, ...]:
        k = _coerce_kind(kind)
        return tuple(f for f in self.fields if f.entity_kind == k)

    def required_fields(self, kind: Union[EntityKind, str]) -> FrozenSet[str]:
        """Shared fields plus the kind's required fields"""
        return frozenset(f.field_name for f in self.field_specs(kind) if f.required)

    def optional_fields(self, kind: Union[EntityKind, str]) -> FrozenSet[str]:
        return frozenset(f.field_name for f in self.field_specs(kind) if not f.required)

    def make_entity_id(self, kind: Union[EntityKind, str], doc_slug: str, page: int, ordinal: int) -> str:
        """
        Deterministic entity id: <prefix>_<doc_slug>_<page>_<nn>.

        Ordinals are zero-padded to two digits; 100 and above render in full.
        """
        k = _coerce_kind(kind)
        if k is None:
            raise InvalidArgumentError(f"Unknown entity kind: {kind!r}")
        if not doc_slug or not _SLUG_RE.match(doc_slug):
            raise InvalidArgumentError(f"doc_slug must be a non-empty lowercase token, got {doc_slug!r}")
        if isinstance(page, bool) or not isinstance(page, int) or page < 1:
            raise InvalidArgumentError(f"page must be >= 1, got {page!r}")
        if isinstance(ordinal, bool) or not isinstance(ordinal, int) or ordinal < 1:
            raise InvalidArgumentError(f"ordinal must be >= 1, got {ordinal!r}")
        return f"{self.id_prefixes[k]}_{doc_slug}_{page}_{ordinal:02d}"

    def kind_definition(self, kind: Union[EntityKind, str]) -> str:
        k = _coerce_kind(kind)
        return self.kind_definitions.get(k, "") if k else ""

    def to_document(self) -> dict:
        """Machine-readable rendering of the whole registry"""
        entities = {}
        for kind in EntityKind:
            entities[kind.value] = {
                "prefix": self.id_prefixes[kind],
                "definition": self.kind_definitions[kind],
                "required": sorted(self.required_fields(kind)),
                "optional": sorted(self.optional_fields(kind)),
            }
        return {
            "entity_kinds": entities,
            "metric_subtypes": [s.value for s in MetricSubtype],
            "measurement_types": [m.value for m in MeasurementType],
            "predicates": [
                {
                    "name": p.predicate.value,
                    "subject": p.subject_label,
                    "object": p.object_label,
                }
                for p in self.predicates
            ],
            "structural_rules": [
                {"index": r.index, "description": r.description, "checker_id": r.checker_id}
                for r in self.rules
            ],
            "id_pattern": "<prefix>_<doc_slug>_<page>_<nn>",
        }


def _build_fields() -> Tuple[FieldSpec, ...]:
    specs = []
    for kind in EntityKind:
        for name in SHARED_FIELDS:
            specs.append(FieldSpec(kind, name, True))
        for name, required in _KIND_FIELDS[kind]:
            specs.append(FieldSpec(kind, name, required))
    return tuple(specs)


SCHEMA = OntologySchema(
    predicates=(
        PredicateSpec(Predicate.REPORT_USING, EntityKind.INDUSTRY, EntityKind.REPORTING_FRAMEWORK),
        PredicateSpec(Predicate.INCLUDE, EntityKind.REPORTING_FRAMEWORK, EntityKind.CATEGORY),
        PredicateSpec(Predicate.CONSIST_OF, EntityKind.CATEGORY, EntityKind.METRIC),
        PredicateSpec(
            Predicate.IS_CALCULATED_BY, EntityKind.METRIC, EntityKind.MODEL,
            subject_subtype=MetricSubtype.CALCULATED,
        ),
        PredicateSpec(
            Predicate.REQUIRES_INPUT_FROM, EntityKind.MODEL, EntityKind.METRIC,
            object_subtype=MetricSubtype.INPUT,
        ),
    ),
    rules=(
        StructuralRule(1, "Every Industry reports using exactly one ReportingFramework.",
                       "industry_single_framework"),
        StructuralRule(2, "Every ReportingFramework includes at least one Category.",
                       "framework_has_category"),
        StructuralRule(3, "Every Category consists of at least one Metric, and every Metric "
                          "belongs to exactly one Category.", "category_metric_membership"),
        StructuralRule(4, "Every CalculatedMetric has exactly one IsCalculatedBy link to a Model; "
                          "DirectMetric and InputMetric have none.", "calculated_metric_model_link"),
        StructuralRule(5, "Every Model requires input from at least one InputMetric.",
                       "model_has_inputs"),
        StructuralRule(6, "Quantitative metrics state a unit.", "quantitative_unit"),
        StructuralRule(7, "No Category, Metric or Model is orphaned: each takes part in at least "
                          "one valid relationship.", "no_orphans"),
    ),
    fields=_build_fields(),
)


def predicate_is_legal(
    subject_kind: Union[EntityKind, str, None],
    predicate: Union[Predicate, str],
    object_kind: Union[EntityKind, str, None],
    subject_subtype: Union[MetricSubtype, str, None] = None,
    object_subtype: Union[MetricSubtype, str, None] = None,
) -> bool:
    return SCHEMA.predicate_is_legal(subject_kind, predicate, object_kind, subject_subtype, object_subtype)


def required_fields(kind: Union[EntityKind, str]) -> FrozenSet[str]:
    return SCHEMA.required_fields(kind)


def optional_fields(kind: Union[EntityKind, str]) -> FrozenSet[str]:
    return SCHEMA.optional_fields(kind)


def make_entity_id(kind: Union[EntityKind, str], doc_slug: str, page: int, ordinal: int) -> str:
    return SCHEMA.make_entity_id(kind, doc_slug, page, ordinal)
