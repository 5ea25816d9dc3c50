"""Tests for synthetic corpora and offline end-to-end runs"""

import random

import pytest

from src.domain.consolidation import consolidate
from src.domain.exceptions import InvalidArgumentError
from src.domain.metrics import compute_summary
from src.domain.models import SCHEMA_RULES
from src.domain.rules import run_rule, structural_findings
from src.domain.segmentation import segment_document
from src.services.completion import OracleCompletionBackend
from src.services.extraction_service import ExtractionSettings, extract_document
from src.services.prompts import PromptMode
from src.services.synthetic import MAX_ENTITIES, MIN_ENTITIES, generate_corpus, graph_fingerprint
from src.services.validation_service import validate_graph


def _run(corpus, mode=PromptMode.ONTOLOGY, parallelism=1):
    segments = segment_document(corpus.bundle).segments
    backend = OracleCompletionBackend(corpus.answers)
    run = extract_document(segments, backend, ExtractionSettings(mode=mode), corpus.title, parallelism=parallelism)
    consolidated = consolidate(run.results, doc_id=corpus.doc_id)
    validated, report = validate_graph(consolidated.graph, backend)
    return consolidated, validated, report


class TestGenerator:
    """Ground truth and bundle layout"""

    def test_truth_is_schema_valid(self):
        """Every rule passes and no structural rule has offenders"""
        rng = random.Random(1)
        for seed in range(100):
            corpus = generate_corpus(seed, rng.randint(MIN_ENTITIES, MAX_ENTITIES))
            for rule in SCHEMA_RULES:
                violations, _, _ = run_rule(rule, corpus.truth)
                assert violations == [], (seed, rule)
            assert all(f.offenders == [] for f in structural_findings(corpus.truth)), seed
            assert corpus.truth.has_unique_ids()
            assert corpus.truth.has_closed_endpoints()

    @pytest.mark.parametrize("n", [MIN_ENTITIES, 13, 30, 57, MAX_ENTITIES])
    def test_entity_count(self, n):
        assert len(generate_corpus(7, n).truth.entities) == n

    def test_deterministic(self):
        a, b = generate_corpus(42, 40), generate_corpus(42, 40)
        assert a.bundle == b.bundle
        assert a.answers == b.answers
        assert graph_fingerprint(a.truth) == graph_fingerprint(b.truth)

    def test_seeds_differ(self):
        assert generate_corpus(1, 40).answers != generate_corpus(2, 40).answers

    @pytest.mark.parametrize("n", [0, MIN_ENTITIES - 1, MAX_ENTITIES + 1])
    def test_size_bounds(self, n):
        with pytest.raises(InvalidArgumentError):
            generate_corpus(0, n)

    def test_one_answer_per_segment(self):
        """Overview, each category section and the appendix"""
        corpus = generate_corpus(3, 30)
        segments = segment_document(corpus.bundle).segments
        assert len(segments) == len(corpus.answers.ontology) == len(corpus.answers.baseline)
        assert segments[0].title == "Overview"
        assert segments[-1].title == "Appendix: Glossary"

    def test_running_title_stripped(self):
        corpus = generate_corpus(5, 60)
        for segment in segment_document(corpus.bundle).segments:
            assert corpus.title not in segment.content


class TestOracleRun:
    """Perfect extraction reproduces the ground truth"""

    def test_truth_recovered(self):
        rng = random.Random(2)
        for seed in range(100):
            corpus = generate_corpus(seed, rng.randint(MIN_ENTITIES, MAX_ENTITIES))
            consolidated, validated, report = _run(corpus)
            assert graph_fingerprint(validated) == graph_fingerprint(corpus.truth), seed
            assert len(consolidated.resolution_map) == corpus.planted["alias_duplicates"]
            assert sum("Dangling" in w for w in consolidated.warnings) == corpus.planted["dangling"]
            summary = compute_summary(report)
            assert summary.semantic_accuracy == 100.0
            assert summary.schema_compliance == 100.0
            assert summary.relationship_retention == 100.0
            assert report.accounting_holds()

    def test_parallel_extraction_same_graph(self):
        corpus = generate_corpus(11, 80)
        _, serial, _ = _run(corpus, parallelism=1)
        _, parallel, _ = _run(corpus, parallelism=4)
        assert serial.model_dump() == parallel.model_dump()

    def test_baseline_collapses(self):
        """Ontology-free answers keep almost nothing"""
        for seed in range(10):
            corpus = generate_corpus(seed, 30)
            consolidated, validated, report = _run(corpus, mode=PromptMode.BASELINE)
            assert validated.relationships == []
            assert len(validated.entities) <= 3
            summary = compute_summary(report)
            assert summary.entity_retention <= 3.1
            assert summary.relationship_retention == 0.0
            assert len(consolidated.graph.entities) > 30
