"""Stage 3: semantic type verification followed by rule-based schema checks"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from src.domain.exceptions import BackendError
from src.domain.metrics import CostLedger
from src.domain.models import (
    SCHEMA_RULES,
    CascadeRecord,
    Entity,
    EntityCounts,
    GraphStage,
    KnowledgeGraph,
    RuleId,
    TargetKind,
    TokenUsage,
    ValidationReport,
    Violation,
)
from src.domain.ontology import SCHEMA, OntologySchema
from src.domain.rules import cascade_filter, schema_validate, structural_findings
from src.services.completion import CompletionBackend, CompletionRequest
from src.services.prompts import build_semantic_prompt, parse_verdict

logger = logging.getLogger(__name__)


@dataclass
class SemanticOutcome:
    entities: List[Entity]
    violations: List[Violation] = field(default_factory=list)
    token_usage: TokenUsage = field(default_factory=TokenUsage)
    calls: int = 0
    unverifiable: List[str] = field(default_factory=list)


def _sem_violation(entity: Entity, detail: str) -> Violation:
    return Violation(
        rule_id=RuleId.SEM,
        target_id=entity.id,
        target_kind=TargetKind.ENTITY,
        detail=detail,
        provenance=list(entity.provenance),
    )


def semantic_validate(
    graph: KnowledgeGraph,
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    parallelism: int = 1,
    model_name: str = "",
    temperature: float = 0.1,
    max_tokens: int = 16000,
) -> SemanticOutcome:
    """
    Phase 1: check every entity's label and description against its kind.

    Unknown kinds are rejected without a backend call. A backend error or an
    unreadable verdict leaves the entity in place, marked unverifiable.
    """
    known: List[Entity] = []
    violations: List[Violation] = []
    for entity in graph.entities:
        if schema.is_known_kind(entity.kind):
            known.append(entity)
        else:
            violations.append(_sem_violation(entity, f"Unknown entity kind {entity.kind!r}"))

    def ask(entity: Entity) -> Tuple[Optional[bool], TokenUsage, Optional[str]]:
        request = CompletionRequest(
            prompt=build_semantic_prompt(entity, schema),
            temperature=temperature,
            max_tokens=max_tokens,
            model_name=model_name,
        )
        try:
            response = backend.complete(request)
        except BackendError as e:
            return None, TokenUsage(), f"backend error: {e}"
        verdict = parse_verdict(response.text)
        if verdict is None:
            return None, response.usage, f"unreadable verdict: {response.text[:80]!r}"
        return verdict, response.usage, None

    if parallelism > 1 and len(known) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            answers = list(pool.map(ask, known))
    else:
        answers = [ask(e) for e in known]

    usage = TokenUsage()
    unverifiable: List[str] = []
    rejected = set()
    for entity, (verdict, spent, problem) in zip(known, answers):
        usage = usage + spent
        if problem is not None:
            logger.warning(f"Entity {entity.id} unverifiable ({problem}); retained")
            unverifiable.append(entity.id)
        elif verdict is False:
            violations.append(_sem_violation(
                entity, f"Label/description do not match the definition of {entity.kind}"
            ))
            rejected.add(id(entity))

    # report order follows the graph
    order = {e.id: i for i, e in reversed(list(enumerate(graph.entities)))}
    violations.sort(key=lambda v: order.get(v.target_id, 0))

    removed_objects = {id(e) for e in graph.entities if not schema.is_known_kind(e.kind)} | rejected
    survivors = [e for e in graph.entities if id(e) not in removed_objects]
    logger.info(
        f"Semantic check: {len(violations)} of {len(graph.entities)} entities rejected, "
        f"{len(known)} backend calls, {len(unverifiable)} unverifiable"
    )
    return SemanticOutcome(
        entities=survivors,
        violations=violations,
        token_usage=usage,
        calls=len(known),
        unverifiable=unverifiable,
    )


def kind_counts(entities: Sequence[Entity]) -> Dict[str, int]:
    counter = Counter(e.kind for e in entities)
    return dict(sorted(counter.items()))


def validate_graph(
    graph: KnowledgeGraph,
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    parallelism: int = 1,
    model_name: str = "",
    ledger: Optional[CostLedger] = None,
    temperature: float = 0.1,
    max_tokens: int = 16000,
) -> Tuple[KnowledgeGraph, ValidationReport]:
    """Phase 1, cascade, Phase 2; the report accounts for every removal"""
    semantic = semantic_validate(graph, backend, schema, parallelism, model_name, temperature, max_tokens)

    cascaded: List[CascadeRecord] = []
    removed_ids = {v.target_id for v in semantic.violations} - {e.id for e in semantic.entities}
    phase1 = cascade_filter(
        graph.model_copy(update={"entities": semantic.entities}), removed_ids, phase=1, log=cascaded
    )

    outcome = schema_validate(phase1, schema)
    cascaded.extend(outcome.cascaded)
    validated = outcome.graph.model_copy(update={"stage": GraphStage.VALIDATED, "doc_id": graph.doc_id})

    report = ValidationReport(
        doc_id=graph.doc_id,
        input_counts=EntityCounts(entities=len(graph.entities), relationships=len(graph.relationships)),
        phase1_removed=semantic.violations,
        phase2_removed=outcome.violations,
        cascaded=cascaded,
        per_rule_pass=outcome.per_rule_pass,
        vacuous_rules=[r.value for r in SCHEMA_RULES if outcome.per_rule_pass[r.value].vacuous],
        output_counts=EntityCounts(entities=len(validated.entities), relationships=len(validated.relationships)),
        semantic_calls=semantic.calls,
        token_usage=semantic.token_usage,
        unverifiable=semantic.unverifiable,
        input_kind_counts=kind_counts(graph.entities),
        output_kind_counts=kind_counts(validated.entities),
        structural_findings=structural_findings(validated, schema),
    )
    if ledger is not None:
        ledger.add_stage3(semantic.token_usage, model_name)
    if not report.accounting_holds():
        logger.error(f"Validation accounting mismatch for {graph.doc_id}")
    logger.info(
        f"Validated {graph.doc_id}: {report.input_counts.entities}E/{report.input_counts.relationships}R -> "
        f"{report.output_counts.entities}E/{report.output_counts.relationships}R"
    )
    return validated, report


# === Report file ===

def report_lines(report: ValidationReport, summary: Optional[dict] = None) -> List[dict]:
    """Line records: one per violation and cascade, then the summary block"""
    lines: List[dict] = []
    for phase, violations in ((1, report.phase1_removed), (2, report.phase2_removed)):
        for v in violations:
            record = {"record": "violation", "phase": phase}
            record.update(v.model_dump(mode="json"))
            lines.append(record)
    for c in report.cascaded:
        record = {"record": "cascade"}
        record.update(c.model_dump(mode="json"))
        lines.append(record)
    lines.append({
        "record": "summary",
        "report": report.model_dump(mode="json", exclude={"phase1_removed", "phase2_removed", "cascaded"}),
    })
    if summary is not None:
        lines.append({"record": "metrics", "metrics": summary})
    return lines


def report_from_lines(lines: Sequence[dict]) -> Tuple[ValidationReport, Optional[dict]]:
    """Rebuild the report (and metrics block, if any) from its line records"""
    phase1, phase2, cascaded = [], [], []
    body: dict = {}
    metrics = None
    for line in lines:
        kind = line.get("record")
        if kind == "violation":
            data = {k: v for k, v in line.items() if k not in ("record", "phase")}
            (phase1 if line.get("phase") == 1 else phase2).append(Violation(**data))
        elif kind == "cascade":
            cascaded.append(CascadeRecord(**{k: v for k, v in line.items() if k != "record"}))
        elif kind == "summary":
            body = dict(line.get("report", {}))
        elif kind == "metrics":
            metrics = line.get("metrics")
    report = ValidationReport(**body, phase1_removed=phase1, phase2_removed=phase2, cascaded=cascaded)
    return report, metrics
