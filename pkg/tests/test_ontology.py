"""Tests for the ontology registry"""

import pytest

from src.domain.exceptions import InvalidArgumentError
from src.domain.ontology import (
    SCHEMA,
    EntityKind,
    MetricSubtype,
    Predicate,
    make_entity_id,
    optional_fields,
    predicate_is_legal,
    required_fields,
)


class TestConnectionMap:
    """Legal triple patterns"""

    def test_industry_reports_using_framework(self):
        """Industry → ReportUsing → ReportingFramework is legal"""
        assert predicate_is_legal("Industry", "ReportUsing", "ReportingFramework")

    def test_direct_metric_cannot_be_calculated(self):
        """Only CalculatedMetrics take IsCalculatedBy"""
        assert not predicate_is_legal("Metric", "IsCalculatedBy", "Model", MetricSubtype.DIRECT)
        assert not predicate_is_legal("Metric", "IsCalculatedBy", "Model", MetricSubtype.INPUT)
        assert predicate_is_legal("Metric", "IsCalculatedBy", "Model", MetricSubtype.CALCULATED)

    def test_kind_mismatch(self):
        """Predicate attached to the wrong kinds is illegal"""
        assert not predicate_is_legal("Category", "ReportUsing", "Metric")

    def test_model_inputs_must_be_input_metrics(self):
        """RequiresInputFrom targets InputMetrics only"""
        assert predicate_is_legal(EntityKind.MODEL, Predicate.REQUIRES_INPUT_FROM, EntityKind.METRIC,
                                  object_subtype="InputMetric")
        assert not predicate_is_legal(EntityKind.MODEL, Predicate.REQUIRES_INPUT_FROM, EntityKind.METRIC,
                                      object_subtype="DirectMetric")

    def test_unknown_predicate_and_kind(self):
        """Anything outside the registry is illegal"""
        assert not predicate_is_legal("Industry", "hasMetric", "ReportingFramework")
        assert not predicate_is_legal("Standard", "ReportUsing", "ReportingFramework")

    def test_exactly_five_predicates(self):
        """The connection map has five entries"""
        assert {p.predicate for p in SCHEMA.predicates} == set(Predicate)

    def test_rendered_pattern(self):
        """Patterns render in arrow form"""
        rendered = [p.render() for p in SCHEMA.predicates]
        assert "Industry → ReportUsing → ReportingFramework" in rendered
        assert "CalculatedMetric → IsCalculatedBy → Model" in rendered


class TestFields:
    """Required and optional fields per kind"""

    def test_model_required(self):
        """Model requires description, equation and input_variables"""
        assert required_fields(EntityKind.MODEL) == {
            "id", "type", "label", "source", "description", "equation", "input_variables",
        }

    def test_industry_optional(self):
        """Industry needs only the shared fields"""
        assert required_fields("Industry") == {"id", "type", "label", "source"}
        assert optional_fields("Industry") == {"sector", "country", "standard_reference"}

    def test_category_section_title(self):
        """Category requires its section title"""
        assert "section_title" in required_fields(EntityKind.CATEGORY)

    def test_required_and_optional_disjoint(self):
        """No field is both required and optional"""
        for kind in EntityKind:
            assert not required_fields(kind) & optional_fields(kind)

    def test_unknown_kind_has_no_fields(self):
        """Unknown kinds resolve to empty sets"""
        assert required_fields("Organization") == frozenset()


class TestEntityIds:
    """Deterministic id construction"""

    def test_metric_id(self):
        """Ordinal is zero-padded"""
        assert make_entity_id(EntityKind.METRIC, "sasb_cb", 12, 3) == "metric_sasb_cb_12_03"

    def test_model_id(self):
        """Kind selects the prefix"""
        assert make_entity_id("Model", "ifrs_s2", 7, 1) == "model_ifrs_s2_7_01"

    def test_large_ordinal(self):
        """Three-digit ordinals render in full"""
        assert make_entity_id(EntityKind.CATEGORY, "doc", 1, 123) == "category_doc_1_123"

    @pytest.mark.parametrize("slug,page,ordinal", [("", 1, 1), ("Bad Slug", 1, 1), ("doc", 0, 1), ("doc", 1, 0)])
    def test_invalid_arguments(self, slug, page, ordinal):
        """Empty slug or non-positive numbers are rejected"""
        with pytest.raises(InvalidArgumentError):
            make_entity_id(EntityKind.METRIC, slug, page, ordinal)

    def test_unknown_kind(self):
        """Only registry kinds get ids"""
        with pytest.raises(InvalidArgumentError):
            make_entity_id("Organization", "doc", 1, 1)


class TestRegistryDocument:
    """Machine-readable rendering"""

    def test_document_lists_everything(self):
        """Kinds, predicates and rules all appear"""
        doc = SCHEMA.to_document()
        assert set(doc["entity_kinds"]) == {k.value for k in EntityKind}
        assert len(doc["predicates"]) == 5
        assert [r["index"] for r in doc["structural_rules"]] == [1, 2, 3, 4, 5, 6, 7]
