"""Synthetic corpora for offline end-to-end runs

A corpus is a random ground-truth graph that satisfies every schema rule,
rendered into a page-structured bundle with a table of contents, plus the
oracle answers a perfect extractor would give for each segment. The answers
carry planted noise that consolidation has to undo: the framework repeated in
every section, alias copies of metrics under a second id, a same-id copy
missing its unit, and one relationship pointing at an id nobody defines.
"""

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from src.data.artifacts import NATIVE_EXPORT, dumps, sha256_text, write_artifact, write_atomic
from src.domain.exceptions import InvalidArgumentError
from src.domain.models import DocumentBundle, Entity, GraphStage, KnowledgeGraph, Page, RawTable, Relationship
from src.domain.ontology import SCHEMA, EntityKind, MeasurementType, MetricSubtype, Predicate
from src.domain.segmentation import SegmentationThresholds, segment_document
from src.services.completion import ORACLE_ARTIFACT, OracleAnswers
from src.services.prompts import doc_slug

logger = logging.getLogger(__name__)

MIN_ENTITIES = 6  # one of each kind plus the input metric every model needs
MAX_ENTITIES = 100
LINES_PER_PAGE = 8

TOPICS = (
    "Greenhouse Gas Emissions", "Energy Management", "Water Management", "Data Security",
    "Waste Management", "Employee Health and Safety", "Supply Chain Management", "Product Safety",
    "Community Relations", "Business Ethics", "Air Quality", "Biodiversity Impacts",
)
UNITS = ("Metric tons (t) CO2-e", "Gigajoules (GJ)", "Percentage (%)", "Number", "Thousand cubic meters (m3)")
BASELINE_KINDS = ("Standard", "Organization", "Sector", "Disclosure")


@dataclass
class SyntheticCorpus:
    doc_id: str
    title: str
    bundle: DocumentBundle
    truth: KnowledgeGraph
    answers: OracleAnswers
    planted: Dict[str, int] = field(default_factory=dict)


def _entity(kind: EntityKind, entity_id: str, label: str, subtype: Optional[MetricSubtype] = None,
            description: str = "", **properties: Any) -> Entity:
    return Entity(
        id=entity_id,
        kind=kind.value,
        metric_subtype=subtype.value if subtype else None,
        label=label,
        description=description,
        properties=properties,
    )


def _answer_record(entity: Entity, doc_id: str, page: int) -> Dict[str, Any]:
    record: Dict[str, Any] = {"id": entity.id, "type": entity.kind}
    if entity.metric_subtype:
        record["metric_type"] = entity.metric_subtype
    record["label"] = entity.label
    if entity.description:
        record["description"] = entity.description
    record.update(copy.deepcopy(entity.properties))
    record["source"] = {"doc_id": doc_id, "page": page, "quote": entity.label}
    return record


def _triple(subject: str, predicate: Predicate, obj: str) -> Dict[str, str]:
    return {"subject": subject, "predicate": predicate.value, "object": obj}


class _IdAllocator:
    def __init__(self, slug: str):
        self.slug = slug
        self.ordinals: Dict[int, int] = {}

    def next(self, kind: EntityKind, page: int) -> str:
        self.ordinals[page] = self.ordinals.get(page, 0) + 1
        return SCHEMA.make_entity_id(kind, self.slug, page, self.ordinals[page])


def generate_corpus(seed: int, n_entities: int = 30, doc_id: Optional[str] = None) -> SyntheticCorpus:
    """
    Deterministic corpus for (seed, n_entities).

    Sizing: 1 Industry, 1 ReportingFramework, max(1, n // 12) Categories,
    max(1, (n - 2 - C) // 8) Models each with one CalculatedMetric and at
    least one InputMetric; the remaining entities are DirectMetrics.
    """
    if not MIN_ENTITIES <= n_entities <= MAX_ENTITIES:
        raise InvalidArgumentError(f"n_entities must be in [{MIN_ENTITIES}, {MAX_ENTITIES}], got {n_entities}")
    rng = random.Random(seed)
    doc_id = doc_id or f"synth-{seed}"
    slug = doc_slug(doc_id)
    title = f"Synthetic Sustainability Standard {seed}"
    n_categories = max(1, n_entities // 12)
    n_models = max(1, (n_entities - 2 - n_categories) // 8)
    n_metrics = n_entities - 2 - n_categories - n_models
    spare = n_metrics - 2 * n_models
    n_extra_inputs = rng.randint(0, spare // 3)
    n_direct = spare - n_extra_inputs

    topics = rng.sample(TOPICS, n_categories)
    # work units: a model group (calculated metric, model, inputs) or a single direct metric
    inputs_per_model = [1] * n_models
    for i in range(n_extra_inputs):
        inputs_per_model[i % n_models] += 1
    units: List[Tuple[str, int]] = [("group", k) for k in range(n_models)] + [("direct", d) for d in range(n_direct)]
    rng.shuffle(units)
    assignment: Dict[int, List[Tuple[str, int]]] = {c: [] for c in range(n_categories)}
    for i, unit in enumerate(units):
        category = i if i < n_categories else rng.randrange(n_categories)
        assignment[category].append(unit)

    # page layout: 1 title, 2 contents, 3 overview, then sections, then appendix
    section_lines: List[List[Tuple[str, Optional[str]]]] = []  # per category: (kind tag, text)
    for c in range(n_categories):
        lines: List[Tuple[str, Optional[str]]] = [("category", None)]
        for unit_kind, k in assignment[c]:
            if unit_kind == "group":
                lines.append(("calculated", str(k)))
                lines.append(("model", str(k)))
                lines.extend(("input", f"{k}:{j}") for j in range(inputs_per_model[k]))
            else:
                lines.append(("direct", str(k)))
        section_lines.append(lines)

    section_pages = [max(1, math.ceil(len(lines) / LINES_PER_PAGE)) for lines in section_lines]
    overview_page = 3
    first_section_page = 4
    starts = []
    page = first_section_page
    for n_pages in section_pages:
        starts.append(page)
        page += n_pages
    appendix_page = page
    last_page = appendix_page

    ids = _IdAllocator(slug)
    industry = _entity(EntityKind.INDUSTRY, ids.next(EntityKind.INDUSTRY, overview_page),
                       f"Synthetic Industry {seed}", sector="Synthetic Sector", country="Global")
    framework = _entity(EntityKind.REPORTING_FRAMEWORK, ids.next(EntityKind.REPORTING_FRAMEWORK, overview_page),
                        title, name=title, version="2024", publisher="Synthetic Standards Board")

    truth_entities: List[Entity] = [industry, framework]
    truth_relationships: List[Relationship] = [
        Relationship(subject=industry.id, predicate=Predicate.REPORT_USING.value, object=framework.id),
    ]

    page_texts: Dict[int, List[str]] = {p: [] for p in range(overview_page, last_page + 1)}
    page_tables: Dict[int, List[RawTable]] = {p: [] for p in range(overview_page, last_page + 1)}
    page_texts[overview_page] += [
        "1 Overview",
        f"This standard applies to {industry.label} entities reporting under {framework.label}.",
        f"Sector: {industry.properties['sector']}.",
    ]

    answers_by_section: List[Dict[str, Any]] = [{
        "entities": [_answer_record(industry, doc_id, overview_page), _answer_record(framework, doc_id, overview_page)],
        "relationships": [_triple(industry.id, Predicate.REPORT_USING, framework.id)],
    }]
    metrics_by_section: List[List[Entity]] = []

    for c, lines in enumerate(section_lines):
        start = starts[c]
        topic = topics[c]
        section_number = c + 2
        category: Optional[Entity] = None
        models: Dict[str, Entity] = {}
        calculated: Dict[str, Entity] = {}
        section_entities: List[Tuple[Entity, int]] = []
        section_rels: List[Relationship] = []
        section_metrics: List[Entity] = []
        table_rows: Dict[int, List[List[str]]] = {}

        for i, (tag, key) in enumerate(lines):
            page = start + i // LINES_PER_PAGE
            if tag == "category":
                category = _entity(EntityKind.CATEGORY, ids.next(EntityKind.CATEGORY, page), topic,
                                   section_title=topic, section_id=str(section_number))
                section_entities.append((category, page))
                section_rels.append(Relationship(subject=framework.id, predicate=Predicate.INCLUDE.value,
                                                 object=category.id))
                page_texts[page] += [f"{section_number} {topic}",
                                     f"Disclosures on {topic.lower()} for {industry.label}."]
                continue

            assert category is not None
            if tag == "model":
                calc = calculated[key]
                model = _entity(
                    EntityKind.MODEL, ids.next(EntityKind.MODEL, page), f"Calculation of {calc.label}",
                    description=f"Derives {calc.label.lower()} from its input quantities.",
                    equation="", input_variables=[],
                )
                models[key] = model
                section_entities.append((model, page))
                section_rels.append(Relationship(subject=calc.id, predicate=Predicate.IS_CALCULATED_BY.value,
                                                 object=model.id))
                page_texts[page].append(f"{model.label}: see the equation below.")
                continue

            code = f"SY-{section_number:02d}-{len(section_metrics) + 1:03d}a.{seed % 10}"
            if tag == "input":
                group, j = key.split(":")
                model = models[group]
                label = f"{calculated[group].label} input {int(j) + 1}"
                subtype = MetricSubtype.INPUT
            elif tag == "calculated":
                label = f"{topic} ratio {int(key) + 1}"
                subtype = MetricSubtype.CALCULATED
            else:
                label = f"{topic} indicator {int(key) + 1}"
                subtype = MetricSubtype.DIRECT
            quantitative = subtype != MetricSubtype.DIRECT or rng.random() < 0.8
            unit = rng.choice(UNITS) if quantitative else "n/a"
            metric = _entity(
                EntityKind.METRIC, ids.next(EntityKind.METRIC, page), label, subtype,
                description=f"{label} reported for the fiscal year.",
                measurement_type=(MeasurementType.QUANTITATIVE if quantitative else MeasurementType.QUALITATIVE).value,
                unit=unit, code=code,
            )
            section_metrics.append(metric)
            section_entities.append((metric, page))
            section_rels.append(Relationship(subject=category.id, predicate=Predicate.CONSIST_OF.value,
                                             object=metric.id))
            if tag == "calculated":
                calculated[key] = metric
            if tag == "input":
                variable = f"x{int(j) + 1}"
                model.properties["input_variables"].append(variable)
                model.properties["equation"] = " + ".join(model.properties["input_variables"])
                section_rels.append(Relationship(subject=model.id, predicate=Predicate.REQUIRES_INPUT_FROM.value,
                                                 object=metric.id))
            page_texts[page].append(f"{code} {label} ({unit})")
            table_rows.setdefault(page, []).append([code, label, unit])

        for n, page in enumerate(sorted(table_rows)):
            page_tables[page].append(RawTable(page=page, header=["Code", "Metric", "Unit"],
                                              rows=table_rows[page], continuation_hint=n > 0))

        truth_entities.extend(e for e, _ in section_entities)
        truth_relationships.extend(section_rels)
        metrics_by_section.append(section_metrics)

        answer = {
            "entities": [_answer_record(framework, doc_id, start)]
                        + [_answer_record(e, doc_id, p) for e, p in section_entities],
            "relationships": [
                {"subject": r.subject, "predicate": r.predicate, "object": r.object} for r in section_rels
            ],
        }
        answers_by_section.append(answer)

    page_texts[appendix_page] += [
        f"{n_categories + 2} Appendix: Glossary",
        "Terms used in this standard carry their ordinary meaning unless stated otherwise.",
    ]
    answers_by_section.append({"entities": [], "relationships": []})

    planted = _plant_noise(rng, answers_by_section, metrics_by_section, doc_id, slug)

    toc_lines = ["Table of Contents", f"1 Overview {'.' * 12} {overview_page}"]
    toc_lines += [f"{c + 2} {topics[c]} {'.' * 12} {starts[c]}" for c in range(n_categories)]
    toc_lines.append(f"{n_categories + 2} Appendix: Glossary {'.' * 12} {appendix_page}")

    pages = [
        Page(number=1, text=f"{title}\nIssued by the Synthetic Standards Board"),
        Page(number=2, text="\n".join(toc_lines)),
    ]
    for number in range(overview_page, last_page + 1):
        body = [title] + page_texts[number] + [f"{title} | page {number}", str(number)]
        pages.append(Page(number=number, text="\n".join(body), tables=page_tables[number]))
    bundle = DocumentBundle(doc_id=doc_id, title=title, pages=pages)

    answers = OracleAnswers(doc_id=doc_id)
    segmentation = segment_document(bundle, SegmentationThresholds())
    if len(segmentation.segments) != len(answers_by_section):
        raise RuntimeError(
            f"Synthetic layout produced {len(segmentation.segments)} segments, expected {len(answers_by_section)}"
        )
    for segment, answer, baseline in zip(
        segmentation.segments, answers_by_section, _baseline_answers(rng, segmentation.segments, slug)
    ):
        key = sha256_text(segment.content)
        answers.ontology[key] = json.dumps(answer, ensure_ascii=False)
        answers.baseline[key] = json.dumps(baseline, ensure_ascii=False)

    truth = KnowledgeGraph(
        doc_id=doc_id, stage=GraphStage.VALIDATED, entities=truth_entities, relationships=truth_relationships,
    )
    logger.info(
        f"Generated corpus {doc_id}: {len(truth.entities)}E/{len(truth.relationships)}R over {len(pages)} pages"
    )
    return SyntheticCorpus(doc_id=doc_id, title=title, bundle=bundle, truth=truth, answers=answers, planted=planted)


def _plant_noise(
    rng: random.Random,
    answers: List[Dict[str, Any]],
    metrics_by_section: List[List[Entity]],
    doc_id: str,
    slug: str,
) -> Dict[str, int]:
    """Add duplicates and a dangling edge to the oracle answers"""
    overview = answers[0]
    all_metrics = [(c, m) for c, metrics in enumerate(metrics_by_section) for m in metrics]
    n_alias = max(1, len(all_metrics) // 10)
    aliased = rng.sample(all_metrics, min(n_alias, len(all_metrics)))

    for c, metric in aliased:
        copy = _answer_record(metric, doc_id, 3)
        copy["id"] = f"{metric.id}_dup"
        overview["entities"].append(copy)
        category_id = answers[c + 1]["entities"][1]["id"]
        overview["relationships"].append(_triple(category_id, Predicate.CONSIST_OF, copy["id"]))

    # same id, unit missing; the later full copy fills it in
    _, partial = rng.choice(all_metrics)
    record = _answer_record(partial, doc_id, 3)
    record["unit"] = ""
    overview["entities"].append(record)

    last = answers[len(metrics_by_section)]
    category_id = last["entities"][1]["id"]
    last["relationships"].append(
        _triple(category_id, Predicate.CONSIST_OF, SCHEMA.make_entity_id(EntityKind.METRIC, slug, 999, 99))
    )
    return {"alias_duplicates": len(aliased), "id_duplicates": 1, "dangling": 1,
            "framework_repeats": len(metrics_by_section)}


def _baseline_answers(rng: random.Random, segments, slug: str) -> List[Dict[str, Any]]:
    """
    What an unconstrained extractor returns: invented kinds, free-form
    predicates, one bare Industry. Nothing but the Industry can survive
    validation.
    """
    out = []
    for s, segment in enumerate(segments):
        entities = []
        relationships = []
        if s == 0:
            entities.append({"id": f"industry_{slug}_1", "type": "Industry", "label": segment.title,
                             "description": "Industry named in the overview"})
        for k in range(12):
            kind = BASELINE_KINDS[(s + k) % len(BASELINE_KINDS)]
            entities.append({
                "id": f"{kind.lower()}_{s}_{k}",
                "type": kind,
                "label": f"{segment.title} item {k + 1}",
                "description": "Mentioned in the text",
                "unit": rng.choice(UNITS),
            })
        for k in range(1, 12):
            relationships.append({"subject": entities[-12]["id"], "predicate": "hasMetric",
                                  "object": entities[-12 + k]["id"]})
        out.append({"entities": entities, "relationships": relationships})
    return out


def graph_fingerprint(graph: KnowledgeGraph) -> Tuple[Any, Any]:
    """Provenance-free view of a graph for equality checks"""
    entities = sorted(
        (e.id, e.kind, e.metric_subtype or "", e.label, e.description, json.dumps(e.properties, sort_keys=True))
        for e in graph.entities
    )
    triples = sorted(r.triple for r in graph.relationships)
    return entities, triples


def write_corpus(corpus: SyntheticCorpus, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """bundle.json, oracle.json, truth.json and a pipeline.yaml wired to the oracle"""
    out = Path(out_dir)
    bundle_path = write_atomic(out / "bundle.json", dumps(corpus.bundle.model_dump(mode="json")))
    oracle_body = corpus.answers.model_dump(mode="json")
    oracle_path = write_artifact(out / "oracle.json", ORACLE_ARTIFACT, sha256_text(bundle_path.read_text("utf-8")),
                                 oracle_body)
    truth_path = write_artifact(out / "truth.json", NATIVE_EXPORT, "",
                                {"graph": corpus.truth.model_dump(mode="json"), "planted": corpus.planted})
    config_path = write_atomic(out / "pipeline.yaml", (
        "backend:\n"
        "  kind: oracle\n"
        "  oracle_path: oracle.json\n"
        "  model: oracle\n"
        "mode: ontology\n"
        "parallelism: 1\n"
    ))
    return {"bundle": bundle_path, "oracle": oracle_path, "truth": truth_path, "config": config_path}
