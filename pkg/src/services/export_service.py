"""Graph export: native JSON or N-Triples"""

import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Union
from urllib.parse import quote

from rdflib import Graph, Literal, Namespace, URIRef
from rdflib.namespace import RDFS

from src.data.artifacts import (
    CONSOLIDATED,
    NATIVE_EXPORT,
    VALIDATED,
    read_artifact,
    sha256_file,
    write_artifact,
    write_atomic,
)
from src.domain.exceptions import ArtifactError, UnknownFormatError
from src.domain.models import KnowledgeGraph

logger = logging.getLogger(__name__)

ENTITY = Namespace("urn:regkg:entity:")
ONTOLOGY = Namespace("urn:regkg:ontology:")

GRAPH_ARTIFACTS = (CONSOLIDATED, VALIDATED, NATIVE_EXPORT)


class ExportFormat(str, Enum):
    NATIVE = "native"
    TRIPLES = "triples"


def entity_uri(entity_id: str) -> URIRef:
    return ENTITY[quote(entity_id, safe="")]


def graph_payload(graph: KnowledgeGraph) -> Dict[str, Any]:
    return {"graph": graph.model_dump(mode="json")}


def load_graph(path: Union[str, Path]) -> KnowledgeGraph:
    """Read any graph-carrying artifact (consolidated, validated, native export)"""
    payload = read_artifact(path)
    kind = payload["header"].get("artifact")
    if kind not in GRAPH_ARTIFACTS:
        raise ArtifactError(f"{path} is a {kind!r} artifact, not a graph")
    return KnowledgeGraph(**payload["graph"])


def import_graph(path: Union[str, Path]) -> KnowledgeGraph:
    return load_graph(path)


def _literals(value: Any):
    if value is None or value == "":
        return []
    if isinstance(value, (list, tuple)):
        return [Literal(str(v)) for v in value if v not in (None, "")]
    if isinstance(value, dict):
        return [Literal(f"{k}={v}") for k, v in sorted(value.items())]
    return [Literal(value if isinstance(value, (int, float, bool)) else str(value))]


def to_rdf(graph: KnowledgeGraph) -> Graph:
    """Relationships as URI statements, entity attributes as literal statements"""
    rdf = Graph()
    rdf.bind("ent", ENTITY)
    rdf.bind("ont", ONTOLOGY)
    for entity in graph.entities:
        node = entity_uri(entity.id)
        rdf.add((node, ONTOLOGY.kind, Literal(entity.kind)))
        if entity.metric_subtype:
            rdf.add((node, ONTOLOGY.metricType, Literal(entity.metric_subtype)))
        if entity.label:
            rdf.add((node, RDFS.label, Literal(entity.label)))
        if entity.description:
            rdf.add((node, ONTOLOGY.description, Literal(entity.description)))
        for name, value in sorted(entity.properties.items()):
            for literal in _literals(value):
                rdf.add((node, ONTOLOGY[quote(name, safe="")], literal))
        for prov in entity.provenance:
            rdf.add((node, ONTOLOGY.sourceSegment, Literal(f"{prov.doc_id}#{prov.segment_id}")))
    for rel in graph.relationships:
        rdf.add((entity_uri(rel.subject), ONTOLOGY[quote(rel.predicate, safe="")], entity_uri(rel.object)))
    return rdf


def to_ntriples(graph: KnowledgeGraph) -> str:
    """Sorted N-Triples text; empty graph gives an empty document"""
    if not graph.entities and not graph.relationships:
        return ""
    text = to_rdf(graph).serialize(format="nt")
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = sorted(line for line in text.splitlines() if line.strip())
    return "\n".join(lines) + "\n"


def export_graph(
    graph_path: Union[str, Path],
    fmt: Union[ExportFormat, str],
    out_path: Union[str, Path],
) -> Path:
    try:
        export_format = ExportFormat(fmt)
    except ValueError:
        raise UnknownFormatError(f"Unknown export format {fmt!r}; choose native or triples")

    graph = load_graph(graph_path)
    if export_format == ExportFormat.NATIVE:
        target = write_artifact(out_path, NATIVE_EXPORT, sha256_file(graph_path), graph_payload(graph))
    else:
        target = write_atomic(out_path, to_ntriples(graph))
    logger.info(f"Exported {len(graph.entities)}E/{len(graph.relationships)}R as {export_format.value} to {target}")
    return target
