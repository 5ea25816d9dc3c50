"""Tests for quality metrics and cost accounting"""

import logging
from decimal import Decimal

import pytest

from src.domain.exceptions import InvalidArgumentError, MissingRuleError
from src.domain.metrics import (
    CostLedger,
    PriceTable,
    compute_summary,
    cost_per_entity,
    cost_waste_ratio,
    efficiency_ratio,
    format_currency,
    relationship_retention,
    rule_percentage,
    schema_compliance,
    semantic_accuracy,
)
from src.domain.models import RulePass, TokenUsage
from src.services.validation_service import validate_graph

PRICES = {
    "version": "2025-01",
    "currency": "USD",
    "models": {
        "gpt-4o": {"input_per_token": "0.000003", "output_per_token": "0.00001"},
    },
}


def _ledger(stage2, stage3, model="gpt-4o"):
    ledger = CostLedger(PriceTable.from_dict(PRICES))
    ledger.add_stage2(TokenUsage(input_tokens=stage2[0], output_tokens=stage2[1]), model)
    ledger.add_stage3(TokenUsage(input_tokens=stage3[0], output_tokens=stage3[1]), model)
    return ledger


class TestPercentages:
    """Ratio metrics, one decimal half-up"""

    @pytest.mark.parametrize("fn,part,whole,expected", [
        (semantic_accuracy, 62, 69, 89.9),
        (relationship_retention, 64, 71, 90.1),
        (relationship_retention, 69, 364, 19.0),
        (semantic_accuracy, 213, 219, 97.3),
        (cost_waste_ratio, 1, 8, 12.5),
        (semantic_accuracy, 5, 5, 100.0),
    ])
    def test_vectors(self, fn, part, whole, expected):
        assert fn(part, whole).rounded == expected

    def test_half_up(self):
        """x.x5 rounds away from zero"""
        assert semantic_accuracy(1, 16).rounded == 6.3

    def test_zero_denominator(self):
        """Zero over zero is 0 and flagged"""
        result = semantic_accuracy(0, 0)
        assert result.rounded == 0.0
        assert result.degenerate

    @pytest.mark.parametrize("part,whole", [(5, 4), (-1, 4), (1, -4)])
    def test_out_of_range(self, part, whole):
        with pytest.raises(InvalidArgumentError):
            relationship_retention(part, whole)


class TestSchemaCompliance:
    """Mean of the six rule pass rates"""

    def test_mean_of_rates(self):
        rates = {"VR001": (100, 100), "VR002": (100, 100), "VR003": (92, 100),
                 "VR004": (100, 100), "VR005": (98, 100), "VR006": (97, 100)}
        result = schema_compliance(rates)
        assert result.value == pytest.approx(97.8333, abs=1e-4)
        assert result.rounded == 97.8

    def test_vacuous_rule_counts_as_full(self):
        """An empty domain is 100%"""
        assert rule_percentage(RulePass(passed=0, total=0)).rounded == 100.0
        passes = {f"VR00{i}": RulePass(passed=10, total=10) for i in range(1, 7)}
        passes["VR004"] = RulePass()
        assert schema_compliance(passes).rounded == 100.0

    def test_missing_rule(self):
        with pytest.raises(MissingRuleError):
            schema_compliance({"VR001": (1, 1)})


class TestPriceTable:
    """Per-token prices"""

    def test_default_fallback(self):
        table = PriceTable.from_dict({"version": "v", "models": {
            "default": {"input_per_token": 1, "output_per_token": 2},
        }})
        assert table.cost("anything", TokenUsage(input_tokens=3, output_tokens=4)) == Decimal(11)

    def test_unpriced_model(self, caplog):
        """Unknown models cost nothing and log a warning"""
        table = PriceTable.from_dict(PRICES)
        with caplog.at_level(logging.WARNING):
            assert table.cost("mystery", TokenUsage(input_tokens=10, output_tokens=10)) == Decimal(0)
        assert "mystery" in caplog.text

    def test_bad_entry(self):
        with pytest.raises(InvalidArgumentError):
            PriceTable.from_dict({"models": {"m": {"input_per_token": "0.1"}}})


class TestCostLedger:
    """Stage costs and cost per entity"""

    def test_ontology_run(self):
        ledger = _ledger((1_000_000, 150_000), (10_000, 4_000))
        assert ledger.stage2_cost == Decimal("4.5")
        assert ledger.stage3_cost == Decimal("0.07")
        assert format_currency(ledger.total_cost) == "4.570000"
        assert format_currency(cost_per_entity(ledger, 295).amount) == "0.015492"

    def test_efficiency_ratio(self):
        """Baseline cost per entity is about 48 times the ontology one"""
        ontology = cost_per_entity(_ledger((1_000_000, 150_000), (10_000, 4_000)), 295).amount
        baseline = cost_per_entity(_ledger((1_000_000, 140_000), (10_000, 5_000)), 6).amount
        assert format_currency(baseline) == "0.746667"
        assert round(float(efficiency_ratio(baseline, ontology)), 1) == 48.2

    def test_no_entities(self):
        """Zero validated entities is infinite and flagged"""
        result = cost_per_entity(_ledger((10, 10), (0, 0)), 0)
        assert result.degenerate
        assert format_currency(result.amount) == "inf"
        with pytest.raises(InvalidArgumentError):
            efficiency_ratio(Decimal(1), result.amount)

    def test_round_trip(self):
        ledger = _ledger((1_000_000, 150_000), (10_000, 4_000))
        restored = CostLedger.from_dict(ledger.to_dict(), PriceTable.from_dict(PRICES))
        assert restored.to_dict() == ledger.to_dict()
        assert ledger.to_dict()["price_table_version"] == "2025-01"


class TestSummary:
    """Metrics block recomputed from the report"""

    def test_banks_summary(self, banks_graph, strict_backend):
        ledger = _ledger((1_000_000, 150_000), (0, 0))
        _, report = validate_graph(banks_graph, strict_backend, model_name="gpt-4o", ledger=ledger)
        summary = compute_summary(report, ledger, {"Metric": 2})
        assert summary.cost_waste_ratio == 20.8
        assert summary.entity_retention == 79.2
        assert summary.error_categories["SEM"] == 11
        assert summary.error_categories["cascade"] == 11
        assert summary.kind_distribution["Metric"] == {"extracted": 45, "validated": 34}
        assert summary.per_rule_compliance == {f"VR00{i}": 100.0 for i in range(1, 7)}
        assert summary.incomplete_at_extraction == {"Metric": 2}
        assert summary.price_table_version == "2025-01"
        assert Decimal(summary.stage3_cost) > 0
        assert summary.flags == []

    def test_pure_function(self, banks_graph, strict_backend):
        """Same report and ledger, same summary"""
        ledger = _ledger((100, 10), (0, 0))
        _, report = validate_graph(banks_graph, strict_backend)
        assert compute_summary(report, ledger) == compute_summary(report, ledger)
