"""Rule-based schema validators VR001-VR006 and the structural rule checks

Each validator is a pure predicate over one graph snapshot. Removal and
cascading are handled by `schema_validate`, which evaluates every rule
before touching the graph.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .exceptions import InvalidArgumentError
from .models import (
    SCHEMA_RULES,
    CascadeRecord,
    Entity,
    GraphStage,
    KnowledgeGraph,
    Relationship,
    RuleId,
    RulePass,
    StructuralFinding,
    TargetKind,
    Violation,
)
from .ontology import SCHEMA, EntityKind, MeasurementType, MetricSubtype, OntologySchema, Predicate

logger = logging.getLogger(__name__)


def is_empty(value) -> bool:
    """None, blank strings and empty containers count as absent"""
    if value is None:
        return True
    if isinstance(value, str):
        return not value.strip()
    if isinstance(value, (list, tuple, dict, set)):
        return len(value) == 0
    return False


def missing_fields(entity: Entity, schema: OntologySchema = SCHEMA) -> List[str]:
    """Required fields of the entity's kind that are absent or empty, sorted"""
    if not schema.is_known_kind(entity.kind):
        return []
    missing = []
    for name in sorted(schema.required_fields(entity.kind)):
        if is_empty(entity.field_value(name)):
            missing.append(name)
    if entity.known_kind == EntityKind.METRIC and "metric_type" not in missing:
        if entity.known_subtype is None:
            missing.append("metric_type")
    return missing


def _has_valid_input(value) -> bool:
    if isinstance(value, str):
        return bool(value.strip())
    if isinstance(value, (list, tuple)):
        return any(not is_empty(v) for v in value)
    return False


# === Individual rules ===

RuleOutcome = Tuple[List[Violation], int, int]


def _entity_violation(rule: RuleId, index: int, entity: Entity, detail: str) -> Violation:
    return Violation(
        rule_id=rule,
        target_id=entity.id,
        target_kind=TargetKind.ENTITY,
        detail=detail,
        provenance=list(entity.provenance),
        target_index=index,
    )


def _outcome(violations: List[Violation], total: int) -> RuleOutcome:
    failing = len({v.target_index for v in violations})
    return violations, total - failing, total


def check_unique_ids(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR001: every occurrence of an id after the first is a violation"""
    seen: Set[str] = set()
    violations = []
    for i, entity in enumerate(graph.entities):
        if entity.id in seen:
            violations.append(_entity_violation(RuleId.VR001, i, entity, f"Duplicate id {entity.id!r}"))
        seen.add(entity.id)
    return _outcome(violations, len(graph.entities))


def check_required_fields(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR002: kind-specific required fields present and non-empty"""
    violations = []
    for i, entity in enumerate(graph.entities):
        if not schema.is_known_kind(entity.kind):
            violations.append(_entity_violation(RuleId.VR002, i, entity, f"Unknown kind {entity.kind!r}"))
            continue
        missing = missing_fields(entity, schema)
        if missing:
            violations.append(_entity_violation(
                RuleId.VR002, i, entity, f"Missing required fields: {', '.join(missing)}"
            ))
    return _outcome(violations, len(graph.entities))


def check_metric_code_unit(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR003: Metrics carry a non-empty code and unit"""
    violations = []
    total = 0
    for i, entity in enumerate(graph.entities):
        if entity.known_kind != EntityKind.METRIC:
            continue
        total += 1
        empty = [name for name in ("code", "unit") if is_empty(entity.field_value(name))]
        if empty:
            violations.append(_entity_violation(RuleId.VR003, i, entity, f"Empty {' and '.join(empty)}"))
    return _outcome(violations, total)


def check_model_inputs(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR004: Models list at least one valid input variable"""
    violations = []
    total = 0
    for i, entity in enumerate(graph.entities):
        if entity.known_kind != EntityKind.MODEL:
            continue
        total += 1
        if not _has_valid_input(entity.field_value("input_variables")):
            violations.append(_entity_violation(RuleId.VR004, i, entity, "No valid input variable"))
    return _outcome(violations, total)


def check_predicates(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR005: every triple matches the connection map"""
    index = graph.entity_index()
    violations = []
    for i, rel in enumerate(graph.relationships):
        subject, obj = index.get(rel.subject), index.get(rel.object)
        legal = (
            subject is not None
            and obj is not None
            and schema.predicate_is_legal(
                subject.kind, rel.predicate, obj.kind, subject.metric_subtype, obj.metric_subtype
            )
        )
        if not legal:
            s_label = _kind_label(subject)
            o_label = _kind_label(obj)
            violations.append(Violation(
                rule_id=RuleId.VR005,
                target_id=relationship_key(rel),
                target_kind=TargetKind.RELATIONSHIP,
                detail=f"Illegal triple {s_label} → {rel.predicate} → {o_label}",
                provenance=list(rel.provenance),
                target_index=i,
            ))
    return _outcome(violations, len(graph.relationships))


def check_calculated_links(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """VR006: each CalculatedMetric has exactly one IsCalculatedBy edge to a Model"""
    index = graph.entity_index()
    links: Counter = Counter()
    for rel in graph.relationships:
        if rel.predicate != Predicate.IS_CALCULATED_BY.value:
            continue
        target = index.get(rel.object)
        if target is not None and target.known_kind == EntityKind.MODEL:
            links[rel.subject] += 1

    violations = []
    total = 0
    for i, entity in enumerate(graph.entities):
        if entity.known_kind != EntityKind.METRIC or entity.known_subtype != MetricSubtype.CALCULATED:
            continue
        total += 1
        count = links[entity.id]
        if count != 1:
            violations.append(_entity_violation(
                RuleId.VR006, i, entity, f"{count} IsCalculatedBy links to a Model, expected exactly 1"
            ))
    return _outcome(violations, total)


RULES: Dict[RuleId, Callable[[KnowledgeGraph, OntologySchema], RuleOutcome]] = {
    RuleId.VR001: check_unique_ids,
    RuleId.VR002: check_required_fields,
    RuleId.VR003: check_metric_code_unit,
    RuleId.VR004: check_model_inputs,
    RuleId.VR005: check_predicates,
    RuleId.VR006: check_calculated_links,
}


def _kind_label(entity: Optional[Entity]) -> str:
    if entity is None:
        return "<missing>"
    if entity.known_kind == EntityKind.METRIC and entity.metric_subtype:
        return entity.metric_subtype
    return entity.kind


def relationship_key(rel: Relationship) -> str:
    return f"{rel.subject}|{rel.predicate}|{rel.object}"


def run_rule(rule_id: RuleId, graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> RuleOutcome:
    """Evaluate one rule; returns (violations, passed, total)"""
    try:
        rule = RULES[RuleId(rule_id)]
    except (ValueError, KeyError):
        raise InvalidArgumentError(f"Not a schema rule: {rule_id!r}")
    return rule(graph, schema)


# === Removal ===

def cascade_filter(
    graph: KnowledgeGraph,
    removed_entity_ids: Iterable[str],
    phase: int = 1,
    log: Optional[List[CascadeRecord]] = None,
) -> KnowledgeGraph:
    """Drop every relationship touching a removed entity; nothing else changes"""
    removed = set(removed_entity_ids)
    if not removed:
        return graph.model_copy()
    kept: List[Relationship] = []
    for rel in graph.relationships:
        endpoint = rel.subject if rel.subject in removed else rel.object if rel.object in removed else None
        if endpoint is None:
            kept.append(rel)
            continue
        if log is not None:
            log.append(CascadeRecord(
                subject=rel.subject, predicate=rel.predicate, object=rel.object,
                phase=phase, removed_endpoint=endpoint,
            ))
    return graph.model_copy(update={"relationships": kept})


@dataclass
class SchemaValidationOutcome:
    graph: KnowledgeGraph
    per_rule_pass: Dict[str, RulePass]
    violations: List[Violation] = field(default_factory=list)
    cascaded: List[CascadeRecord] = field(default_factory=list)
    rounds: int = 1


def _validate_snapshot(
    graph: KnowledgeGraph,
    rule_order: Sequence[RuleId],
    schema: OntologySchema,
) -> Tuple[List[Violation], Dict[str, RulePass]]:
    violations: List[Violation] = []
    passes: Dict[str, RulePass] = {}
    for rule_id in rule_order:
        found, passed, total = run_rule(rule_id, graph, schema)
        violations.extend(found)
        passes[rule_id.value] = RulePass(passed=passed, total=total)
    return violations, passes


def _apply_removals(
    graph: KnowledgeGraph,
    violations: List[Violation],
    phase: int,
    cascaded: List[CascadeRecord],
) -> KnowledgeGraph:
    entity_positions = {v.target_index for v in violations if v.target_kind == TargetKind.ENTITY}
    rel_positions = {v.target_index for v in violations if v.target_kind == TargetKind.RELATIONSHIP}

    kept_entities = [e for i, e in enumerate(graph.entities) if i not in entity_positions]
    surviving_ids = {e.id for e in kept_entities}
    removed_ids = {graph.entities[i].id for i in entity_positions} - surviving_ids

    # relationships already condemned are not counted as cascades
    remaining = [r for i, r in enumerate(graph.relationships) if i not in rel_positions]
    filtered = cascade_filter(
        graph.model_copy(update={"relationships": remaining}), removed_ids, phase, cascaded
    )
    return graph.model_copy(update={"entities": kept_entities, "relationships": filtered.relationships})


def schema_validate(
    graph: KnowledgeGraph,
    schema: OntologySchema = SCHEMA,
    rule_order: Sequence[RuleId] = SCHEMA_RULES,
    max_rounds: int = 10,
) -> SchemaValidationOutcome:
    """
    Phase 2: VR001-VR006 against one snapshot, then removal and cascade.

    All rules see the same snapshot. Removals can expose new violations
    (a Model dropped by VR004 leaves its CalculatedMetric unlinked), so the
    pass repeats on the filtered graph until nothing changes. `per_rule_pass`
    always describes the first snapshot; later violations carry their round.
    """
    violations, per_rule_pass = _validate_snapshot(graph, rule_order, schema)
    cascaded: List[CascadeRecord] = []
    all_violations = list(violations)
    current = _apply_removals(graph, violations, 2, cascaded)

    rounds = 1
    while violations and rounds < max_rounds:
        violations, _ = _validate_snapshot(current, rule_order, schema)
        if not violations:
            break
        rounds += 1
        for v in violations:
            v.round = rounds
        all_violations.extend(violations)
        current = _apply_removals(current, violations, 2, cascaded)

    if rounds > 1:
        logger.info(f"Schema validation reached a fixpoint after {rounds} rounds")
    logger.info(
        f"Schema validation removed {len(all_violations)} elements "
        f"(+{len(cascaded)} cascaded relationships)"
    )
    return SchemaValidationOutcome(
        graph=current.model_copy(update={"stage": GraphStage.VALIDATED}),
        per_rule_pass=per_rule_pass,
        violations=all_violations,
        cascaded=cascaded,
        rounds=rounds,
    )


# === Structural rules (advisory) ===

def structural_findings(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> List[StructuralFinding]:
    """
    Evaluate the seven structural rules and list offending entity ids.

    Findings are reported, never enforced: VR001-VR006 decide removals.
    """
    index = graph.entity_index()
    outgoing: Dict[Tuple[str, str], List[str]] = defaultdict(list)
    incoming: Dict[Tuple[str, str], List[str]] = defaultdict(list)
    touched: Set[str] = set()
    for rel in graph.relationships:
        outgoing[(rel.subject, rel.predicate)].append(rel.object)
        incoming[(rel.object, rel.predicate)].append(rel.subject)
        subject, obj = index.get(rel.subject), index.get(rel.object)
        if subject and obj and schema.predicate_is_legal(
            subject.kind, rel.predicate, obj.kind, subject.metric_subtype, obj.metric_subtype
        ):
            touched.update((rel.subject, rel.object))

    def of_kind(kind: EntityKind) -> List[Entity]:
        return [e for e in graph.entities if e.known_kind == kind]

    offenders: Dict[str, List[str]] = {rule.checker_id: [] for rule in schema.rules}

    for e in of_kind(EntityKind.INDUSTRY):
        if len(outgoing[(e.id, Predicate.REPORT_USING.value)]) != 1:
            offenders["industry_single_framework"].append(e.id)
    for e in of_kind(EntityKind.REPORTING_FRAMEWORK):
        if not outgoing[(e.id, Predicate.INCLUDE.value)]:
            offenders["framework_has_category"].append(e.id)
    for e in of_kind(EntityKind.CATEGORY):
        if not outgoing[(e.id, Predicate.CONSIST_OF.value)]:
            offenders["category_metric_membership"].append(e.id)
    for e in of_kind(EntityKind.METRIC):
        if len(incoming[(e.id, Predicate.CONSIST_OF.value)]) != 1:
            offenders["category_metric_membership"].append(e.id)
        links = len(outgoing[(e.id, Predicate.IS_CALCULATED_BY.value)])
        expected = 1 if e.known_subtype == MetricSubtype.CALCULATED else 0
        if links != expected:
            offenders["calculated_metric_model_link"].append(e.id)
        if (str(e.field_value("measurement_type") or "").casefold() == MeasurementType.QUANTITATIVE.value.casefold()
                and is_empty(e.field_value("unit"))):
            offenders["quantitative_unit"].append(e.id)
    for e in of_kind(EntityKind.MODEL):
        if not outgoing[(e.id, Predicate.REQUIRES_INPUT_FROM.value)]:
            offenders["model_has_inputs"].append(e.id)
    for e in graph.entities:
        if e.known_kind in (EntityKind.CATEGORY, EntityKind.METRIC, EntityKind.MODEL) and e.id not in touched:
            offenders["no_orphans"].append(e.id)

    return [
        StructuralFinding(rule_index=rule.index, checker_id=rule.checker_id, offenders=offenders[rule.checker_id])
        for rule in schema.rules
    ]
