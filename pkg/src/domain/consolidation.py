"""Three-pass consolidation of per-segment extraction results

Pass 1 resolves ids across segments, pass 2 merges duplicate entities,
pass 3 rewrites and deduplicates relationships. The output graph has unique
ids and closed relationship endpoints.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from .models import Entity, ExtractionResult, GraphStage, KnowledgeGraph, Relationship
from .ontology import SCHEMA, EntityKind, OntologySchema
from .rules import is_empty, missing_fields

logger = logging.getLogger(__name__)

_WS_RE = re.compile(r"\s+")


class IdResolutionMap(BaseModel):
    """alias id -> canonical id; identity entries are omitted"""
    aliases: Dict[str, str] = {}

    def canonical(self, entity_id: str) -> str:
        return self.aliases.get(entity_id, entity_id)

    def __len__(self) -> int:
        return len(self.aliases)


@dataclass
class ConsolidationResult:
    graph: KnowledgeGraph
    resolution_map: IdResolutionMap
    warnings: List[str] = field(default_factory=list)


def normalize_label(label: str) -> str:
    """Case-fold, trim and collapse internal whitespace"""
    return _WS_RE.sub(" ", (label or "").strip()).casefold()


def _alias_key(entity: Entity) -> Optional[Tuple[str, str, str]]:
    label = normalize_label(entity.label)
    if not label:
        return None
    if entity.known_kind == EntityKind.METRIC:
        code = str(entity.properties.get("code") or "").strip()
        if not code:
            return None
        return (entity.kind, label, code)
    return (entity.kind, label, "")


class _UnionFind:
    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, item: str) -> str:
        self.parent.setdefault(item, item)
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smallest id stays root
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def resolve_ids(results: Sequence[ExtractionResult]) -> IdResolutionMap:
    """
    Alias entities from different segments that denote the same thing.

    Identical ids alias trivially. Otherwise two entities alias when they
    share a kind and a normalized label, and, for Metrics, an equal non-empty
    code. Every alias maps straight to the smallest id of its class.
    """
    uf = _UnionFind()
    groups: Dict[Tuple[str, str, str], List[Tuple[int, str]]] = {}
    for seg_index, result in enumerate(results):
        for entity in result.entities:
            uf.find(entity.id)
            key = _alias_key(entity)
            if key is not None:
                groups.setdefault(key, []).append((seg_index, entity.id))

    for members in groups.values():
        for i, (seg_a, id_a) in enumerate(members):
            for seg_b, id_b in members[i + 1:]:
                if seg_a != seg_b:
                    uf.union(id_a, id_b)

    aliases = {}
    for entity_id in sorted(uf.parent):
        root = uf.find(entity_id)
        if root != entity_id:
            aliases[entity_id] = root
    if aliases:
        logger.info(f"Resolved {len(aliases)} alias ids")
    return IdResolutionMap(aliases=aliases)


def _merge_value(field_name: str, entity_id: str, current, incoming, warnings: List[str]):
    if is_empty(current):
        return incoming if not is_empty(incoming) else current
    if not is_empty(incoming) and incoming != current:
        message = f"Merge conflict on {entity_id}.{field_name}: kept {current!r}, ignored {incoming!r}"
        logger.warning(message)
        warnings.append(message)
    return current


def _merge_into(target: Entity, other: Entity, warnings: List[str]) -> None:
    target.label = _merge_value("label", target.id, target.label, other.label, warnings)
    target.description = _merge_value("description", target.id, target.description, other.description, warnings)
    target.metric_subtype = _merge_value(
        "metric_type", target.id, target.metric_subtype, other.metric_subtype, warnings
    )
    for name, value in other.properties.items():
        target.properties[name] = _merge_value(name, target.id, target.properties.get(name), value, warnings)
    target.provenance.extend(p.model_copy() for p in other.provenance)


def dedupe_entities(
    results: Sequence[ExtractionResult],
    resolution_map: IdResolutionMap,
    warnings: Optional[List[str]] = None,
    schema: OntologySchema = SCHEMA,
) -> Dict[str, Entity]:
    """
    One entity per canonical id, in first-occurrence order.

    Non-empty values win over empty ones, then the earlier segment wins.
    An id reused for a different kind keeps the earliest kind.
    """
    sink = warnings if warnings is not None else []
    merged: Dict[str, Entity] = {}
    for result in results:
        for entity in result.entities:
            canonical = resolution_map.canonical(entity.id)
            existing = merged.get(canonical)
            if existing is None:
                merged[canonical] = entity.model_copy(update={"id": canonical}, deep=True)
                continue
            if existing.kind != entity.kind:
                message = (
                    f"Id {canonical} reused for kind {entity.kind} (already {existing.kind}); "
                    f"copy from {result.segment_id} dropped"
                )
                logger.warning(message)
                sink.append(message)
                continue
            _merge_into(existing, entity, sink)

    for entity in merged.values():
        entity.incomplete = bool(missing_fields(entity, schema))
    return merged


def dedupe_relationships(
    results: Sequence[ExtractionResult],
    resolution_map: IdResolutionMap,
    warnings: Optional[List[str]] = None,
) -> List[Relationship]:
    """Rewrite endpoints to canonical ids and collapse identical triples"""
    sink = warnings if warnings is not None else []
    unique: Dict[Tuple[str, str, str], Relationship] = {}
    for result in results:
        for rel in result.relationships:
            subject = resolution_map.canonical(rel.subject)
            obj = resolution_map.canonical(rel.object)
            if subject == obj:
                message = f"Self-loop {rel.subject} -{rel.predicate}-> {rel.object} after aliasing; dropped"
                logger.warning(message)
                sink.append(message)
                continue
            key = (subject, rel.predicate, obj)
            if key in unique:
                unique[key].provenance.extend(p.model_copy() for p in rel.provenance)
            else:
                unique[key] = Relationship(
                    subject=subject,
                    predicate=rel.predicate,
                    object=obj,
                    provenance=[p.model_copy() for p in rel.provenance],
                )
    return list(unique.values())


def _doc_id(results: Sequence[ExtractionResult]) -> str:
    for result in results:
        for element in list(result.entities) + list(result.relationships):
            if element.provenance:
                return element.provenance[0].doc_id
    return ""


def consolidate(
    results: Sequence[ExtractionResult],
    doc_id: Optional[str] = None,
    schema: OntologySchema = SCHEMA,
) -> ConsolidationResult:
    """Merge per-segment results into one graph; deterministic in input order"""
    warnings: List[str] = []
    resolution_map = resolve_ids(results)
    entities = dedupe_entities(results, resolution_map, warnings, schema)
    relationships = dedupe_relationships(results, resolution_map, warnings)

    closed: List[Relationship] = []
    for rel in relationships:
        missing = [end for end in (rel.subject, rel.object) if end not in entities]
        if missing:
            message = f"Dangling relationship {rel.subject} -{rel.predicate}-> {rel.object}: undefined {', '.join(missing)}"
            logger.warning(message)
            warnings.append(message)
            continue
        closed.append(rel)

    graph = KnowledgeGraph(
        doc_id=doc_id if doc_id is not None else _doc_id(results),
        stage=GraphStage.CONSOLIDATED,
        entities=list(entities.values()),
        relationships=closed,
    )
    raw_entities = sum(len(r.entities) for r in results)
    raw_relationships = sum(len(r.relationships) for r in results)
    logger.info(
        f"Consolidated {raw_entities}E/{raw_relationships}R from {len(results)} segments "
        f"into {len(graph.entities)}E/{len(graph.relationships)}R"
    )
    return ConsolidationResult(graph=graph, resolution_map=resolution_map, warnings=warnings)
