"""Test fixtures and utilities"""

import json
from typing import List, Optional, Tuple

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from src.data.models import Base
from src.domain.models import (
    DocumentBundle,
    Entity,
    GraphStage,
    KnowledgeGraph,
    Page,
    Provenance,
    Relationship,
    Segment,
)
from src.domain.ontology import EntityKind, MetricSubtype, make_entity_id
from src.services.completion import OracleAnswers, OracleCompletionBackend

BANKS_DOC = "sasb-commercial-banks"
BANKS_SLUG = "sasb_commercial_banks"
BANKS_CATEGORIES = (
    "Data Security",
    "Financial Inclusion and Capacity Building",
    "Incorporation of ESG Factors in Credit Analysis",
    "Financed Emissions",
    "Business Ethics",
)
BANKS_TITLE = "Commercial Banks Sustainability Accounting Standard"


def provenance(segment_id: str = "seg_1", page: int = 3, doc_id: str = BANKS_DOC) -> Provenance:
    return Provenance(doc_id=doc_id, segment_id=segment_id, segment_title=segment_id, page_range=(page, page),
                      quote="excerpt")


def metric(entity_id: str, label: str, subtype: MetricSubtype = MetricSubtype.DIRECT, code: str = "FN-CB-000a.1",
           unit: str = "Number", segment_id: str = "seg_1", page: int = 3) -> Entity:
    return Entity(
        id=entity_id,
        kind=EntityKind.METRIC.value,
        metric_subtype=subtype.value,
        label=label,
        description=f"{label} for the reporting period",
        properties={"measurement_type": "Quantitative", "unit": unit, "code": code},
        provenance=[provenance(segment_id, page)],
    )


def build_banks_graph() -> KnowledgeGraph:
    """
    53 entities, 53 relationships: Industry, Framework, 5 Categories,
    45 Metrics (1 Calculated, 1 Input, 43 Direct), 1 Model.
    """
    entities: List[Entity] = []
    rels: List[Relationship] = []
    industry = Entity(
        id=make_entity_id(EntityKind.INDUSTRY, BANKS_SLUG, 1, 1), kind="Industry", label="Commercial Banks",
        properties={"sector": "Financials"}, provenance=[provenance("seg_1", 3)],
    )
    framework = Entity(
        id=make_entity_id(EntityKind.REPORTING_FRAMEWORK, BANKS_SLUG, 1, 2), kind="ReportingFramework",
        label="SASB Commercial Banks Standard", properties={"name": "SASB Commercial Banks Standard", "version": "2023"},
        provenance=[provenance("seg_1", 3)],
    )
    entities += [industry, framework]
    rels.append(Relationship(subject=industry.id, predicate="ReportUsing", object=framework.id))

    metrics: List[Entity] = []
    model: Optional[Entity] = None
    calculated: Optional[Entity] = None
    input_metric: Optional[Entity] = None
    for i, title in enumerate(BANKS_CATEGORIES):
        seg = f"seg_{i + 2}"
        page = 5 + i * 3
        category = Entity(
            id=make_entity_id(EntityKind.CATEGORY, BANKS_SLUG, page, 1), kind="Category", label=title,
            properties={"section_title": title}, provenance=[provenance(seg, page)],
        )
        entities.append(category)
        rels.append(Relationship(subject=framework.id, predicate="Include", object=category.id))
        for j in range(9):
            subtype = MetricSubtype.DIRECT
            if i == 3 and j == 0:
                subtype = MetricSubtype.CALCULATED
            elif i == 3 and j == 1:
                subtype = MetricSubtype.INPUT
            m = metric(
                make_entity_id(EntityKind.METRIC, BANKS_SLUG, page + 1, j + 1),
                f"{title} metric {j + 1}",
                subtype,
                code=f"FN-CB-{230 + i * 10}a.{j + 1}",
                segment_id=seg,
                page=page + 1,
            )
            metrics.append(m)
            rels.append(Relationship(subject=category.id, predicate="ConsistOf", object=m.id))
            if subtype == MetricSubtype.CALCULATED:
                calculated = m
            if subtype == MetricSubtype.INPUT:
                input_metric = m
        if i == 3:
            model = Entity(
                id=make_entity_id(EntityKind.MODEL, BANKS_SLUG, page + 1, 10), kind="Model",
                label="Financed emissions attribution",
                description="Attributes client emissions by the share of outstanding exposure",
                properties={"equation": "exposure / value * emissions", "input_variables": ["exposure"]},
                provenance=[provenance(seg, page + 1)],
            )
    entities += metrics
    entities.append(model)
    rels.append(Relationship(subject=calculated.id, predicate="IsCalculatedBy", object=model.id))
    rels.append(Relationship(subject=model.id, predicate="RequiresInputFrom", object=input_metric.id))
    return KnowledgeGraph(doc_id=BANKS_DOC, stage=GraphStage.CONSOLIDATED, entities=entities, relationships=rels)


def build_toc_bundle(
    sections: List[Tuple[str, int]],
    last_page: int,
    doc_id: str = "toc-doc",
    header: str = "Sample Standard",
    toc_page_text: Optional[str] = None,
) -> DocumentBundle:
    """Title page, contents page, then body pages with a running header and footer"""
    toc = toc_page_text or "\n".join(
        ["Table of Contents"] + [f"{i + 1} {title} {'.' * 8} {start}" for i, (title, start) in enumerate(sections)]
    )
    starts = {start: (i + 1, title) for i, (title, start) in enumerate(sections)}
    pages = [Page(number=1, text=f"{header}\nIssued 2023"), Page(number=2, text=toc)]
    for number in range(3, last_page + 1):
        body = [header]
        if number in starts:
            n, title = starts[number]
            body.append(f"{n} {title}")
        body.append(f"Guidance paragraph {chr(ord('a') + number % 26)} on reporting boundaries.")
        body += [f"{header} | page {number}", str(number)]
        pages.append(Page(number=number, text="\n".join(body)))
    return DocumentBundle(doc_id=doc_id, title=header, pages=pages)


@pytest.fixture
def banks_graph() -> KnowledgeGraph:
    """Clean Commercial Banks consolidated graph"""
    return build_banks_graph()


@pytest.fixture
def banks_bundle() -> DocumentBundle:
    """23 pages, contents on page 2, ten sections from page 3"""
    titles = [
        "Introduction", "Industry Description", "Data Security", "Financial Inclusion", "ESG Credit Analysis",
        "Financed Emissions", "Business Ethics", "Systemic Risk", "Activity Metrics", "Appendix",
    ]
    return build_toc_bundle([(t, 3 + 2 * i) for i, t in enumerate(titles)], last_page=23, doc_id=BANKS_DOC,
                            header=BANKS_TITLE)


@pytest.fixture
def make_segment():
    """Factory for segments"""
    def _make(content: str = "FN-CB-230a.1 Number of data breaches (Number)", seg_id: str = "seg_3",
              title: str = "Data Security", pages: Tuple[int, int] = (5, 7), doc_id: str = BANKS_DOC,
              **kwargs) -> Segment:
        return Segment(id=seg_id, doc_id=doc_id, title=title, section_number=seg_id.split("_", 1)[-1],
                       page_range=pages, content=content, **kwargs)
    return _make


@pytest.fixture
def extraction_json():
    """Serialize entities/relationships as a backend answer"""
    def _dump(entities: List[dict], relationships: List[dict] = ()) -> str:
        return json.dumps({"entities": list(entities), "relationships": list(relationships)})
    return _dump


@pytest.fixture
def affirming_backend() -> OracleCompletionBackend:
    """Answers yes to every semantic check"""
    return OracleCompletionBackend(OracleAnswers())


@pytest.fixture
def strict_backend(banks_graph) -> OracleCompletionBackend:
    """Rejects eleven Direct metrics of the banks graph"""
    direct = [e.id for e in banks_graph.entities if e.metric_subtype == MetricSubtype.DIRECT.value]
    return OracleCompletionBackend(OracleAnswers(), reject_ids=direct[-11:])


@pytest.fixture
def test_db():
    """Create an in-memory SQLite database for testing"""
    engine = create_engine(
        "sqlite:///:memory:",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool
    )
    Base.metadata.create_all(engine)
    yield engine
    engine.dispose()


@pytest.fixture
def db_session(test_db) -> Session:
    """Session on the in-memory replay store"""
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=test_db)
    session = SessionLocal()
    try:
        yield session
    finally:
        session.close()



@pytest.fixture
def make_metric():
    """Factory for valid Metric entities"""
    return metric


@pytest.fixture
def make_provenance():
    return provenance


@pytest.fixture
def toc_bundle():
    """Factory for bundles with a generated contents page"""
    return build_toc_bundle
