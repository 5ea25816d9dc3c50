"""Quality metrics and the token/dollar cost ledger"""

import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel

from .exceptions import InvalidArgumentError, MissingRuleError
from .models import SCHEMA_RULES, RuleId, RulePass, TargetKind, TokenUsage, ValidationReport

logger = logging.getLogger(__name__)

INFINITY = Decimal("Infinity")
PERCENT_STEP = Decimal("0.1")
CURRENCY_STEP = Decimal("0.000001")


def round_half_up(value: Union[Fraction, Decimal], step: Decimal = PERCENT_STEP) -> Decimal:
    if isinstance(value, Fraction):
        value = Decimal(value.numerator) / Decimal(value.denominator)
    return value.quantize(step, rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class Percentage:
    """Exact percentage plus a flag for undefined (zero-denominator) inputs"""
    exact: Fraction
    degenerate: bool = False

    @property
    def value(self) -> float:
        return float(self.exact)

    @property
    def rounded(self) -> float:
        """One decimal place, half-up"""
        return float(round_half_up(self.exact))


def _ratio(part: int, whole: int, part_name: str, whole_name: str) -> Percentage:
    if part < 0 or whole < 0:
        raise InvalidArgumentError(f"{part_name} and {whole_name} must be non-negative, got ({part}, {whole})")
    if part > whole:
        raise InvalidArgumentError(f"{part_name} ({part}) exceeds {whole_name} ({whole})")
    if whole == 0:
        return Percentage(Fraction(0), degenerate=True)
    return Percentage(Fraction(part * 100, whole))


def semantic_accuracy(correct: int, total: int) -> Percentage:
    return _ratio(correct, total, "correct", "total")


def relationship_retention(validated: int, extracted: int) -> Percentage:
    return _ratio(validated, extracted, "validated", "extracted")


def cost_waste_ratio(filtered: int, extracted: int) -> Percentage:
    """Share of extracted entities that validation threw away"""
    return _ratio(filtered, extracted, "filtered", "extracted")


def rule_percentage(rule_pass: RulePass) -> Percentage:
    """Pass rate of one rule; an empty domain is vacuously compliant"""
    if rule_pass.total == 0:
        return Percentage(Fraction(100))
    return _ratio(rule_pass.passed, rule_pass.total, "passed", "total")


def schema_compliance(per_rule_pass: Mapping[str, Union[RulePass, Tuple[int, int]]]) -> Percentage:
    """Unweighted mean of the six per-rule pass rates"""
    rates = []
    for rule in SCHEMA_RULES:
        entry = per_rule_pass.get(rule.value)
        if entry is None:
            raise MissingRuleError(f"No pass counts for {rule.value}")
        if not isinstance(entry, RulePass):
            passed, total = entry
            entry = RulePass(passed=passed, total=total)
        rates.append(rule_percentage(entry).exact)
    return Percentage(sum(rates, Fraction(0)) / len(rates))


# === Costs ===

@dataclass(frozen=True)
class ModelPrice:
    """USD per token"""
    input_per_token: Decimal
    output_per_token: Decimal


@dataclass(frozen=True)
class PriceTable:
    version: str
    prices: Mapping[str, ModelPrice]
    currency: str = "USD"

    @classmethod
    def from_dict(cls, data: dict) -> "PriceTable":
        """
        Build from a mapping like
        {"version": "...", "models": {"name": {"input_per_token": ..., "output_per_token": ...}}}
        """
        models = data.get("models") or {}
        prices = {}
        for name, entry in models.items():
            try:
                prices[name] = ModelPrice(
                    input_per_token=Decimal(str(entry["input_per_token"])),
                    output_per_token=Decimal(str(entry["output_per_token"])),
                )
            except (KeyError, TypeError, ArithmeticError) as e:
                raise InvalidArgumentError(f"Bad price entry for {name!r}: {e}")
        return cls(version=str(data.get("version", "unversioned")), prices=prices,
                   currency=str(data.get("currency", "USD")))

    def price_for(self, model_name: str) -> Optional[ModelPrice]:
        return self.prices.get(model_name) or self.prices.get("default")

    def cost(self, model_name: str, usage: TokenUsage) -> Decimal:
        price = self.price_for(model_name)
        if price is None:
            logger.warning(f"No price for model {model_name!r} in table {self.version}; counting 0")
            return Decimal(0)
        return usage.input_tokens * price.input_per_token + usage.output_tokens * price.output_per_token


EMPTY_PRICE_TABLE = PriceTable(version="none", prices={})


@dataclass
class CostLedger:
    """Token counts per stage and their dollar cost under one price table"""
    price_table: PriceTable = EMPTY_PRICE_TABLE
    stage2_model: str = ""
    stage3_model: str = ""
    stage2_tokens: TokenUsage = field(default_factory=TokenUsage)
    stage3_tokens: TokenUsage = field(default_factory=TokenUsage)

    def add_stage2(self, usage: TokenUsage, model_name: Optional[str] = None) -> None:
        self.stage2_tokens = self.stage2_tokens + usage
        if model_name:
            self.stage2_model = model_name

    def add_stage3(self, usage: TokenUsage, model_name: Optional[str] = None) -> None:
        self.stage3_tokens = self.stage3_tokens + usage
        if model_name:
            self.stage3_model = model_name

    @property
    def stage2_cost(self) -> Decimal:
        return self.price_table.cost(self.stage2_model, self.stage2_tokens)

    @property
    def stage3_cost(self) -> Decimal:
        return self.price_table.cost(self.stage3_model, self.stage3_tokens)

    @property
    def total_cost(self) -> Decimal:
        return self.stage2_cost + self.stage3_cost

    def to_dict(self) -> dict:
        return {
            "price_table_version": self.price_table.version,
            "currency": self.price_table.currency,
            "stage2": {
                "model": self.stage2_model,
                "input_tokens": self.stage2_tokens.input_tokens,
                "output_tokens": self.stage2_tokens.output_tokens,
                "cost": format_currency(self.stage2_cost),
            },
            "stage3": {
                "model": self.stage3_model,
                "input_tokens": self.stage3_tokens.input_tokens,
                "output_tokens": self.stage3_tokens.output_tokens,
                "cost": format_currency(self.stage3_cost),
            },
            "total_cost": format_currency(self.total_cost),
        }

    @classmethod
    def from_dict(cls, data: dict, price_table: PriceTable) -> "CostLedger":
        s2, s3 = data.get("stage2", {}), data.get("stage3", {})
        return cls(
            price_table=price_table,
            stage2_model=s2.get("model", ""),
            stage3_model=s3.get("model", ""),
            stage2_tokens=TokenUsage(input_tokens=s2.get("input_tokens", 0), output_tokens=s2.get("output_tokens", 0)),
            stage3_tokens=TokenUsage(input_tokens=s3.get("input_tokens", 0), output_tokens=s3.get("output_tokens", 0)),
        )


def format_currency(amount: Decimal) -> str:
    if amount.is_infinite():
        return "inf"
    return str(round_half_up(amount, CURRENCY_STEP))


@dataclass(frozen=True)
class CostPerEntity:
    amount: Decimal
    degenerate: bool = False


def cost_per_entity(ledger: CostLedger, validated_entities: int) -> CostPerEntity:
    if validated_entities < 0:
        raise InvalidArgumentError(f"validated_entities must be >= 0, got {validated_entities}")
    if validated_entities == 0:
        return CostPerEntity(INFINITY, degenerate=True)
    return CostPerEntity(ledger.total_cost / validated_entities)


def efficiency_ratio(costly: Decimal, cheap: Decimal) -> Decimal:
    """How many times more one cost-per-entity figure is than another"""
    if cheap <= 0 or cheap.is_infinite():
        raise InvalidArgumentError(f"Reference cost per entity must be finite and positive, got {cheap}")
    return costly / cheap


# === Summary ===

class MetricsSummary(BaseModel):
    """Machine-readable metrics block; recomputable from report + ledger"""
    semantic_accuracy: float
    schema_compliance: float
    relationship_retention: float
    entity_retention: float
    cost_waste_ratio: float
    cost_per_entity: str
    stage2_cost: str
    stage3_cost: str
    total_cost: str
    price_table_version: str
    per_rule_compliance: Dict[str, float]
    vacuous_rules: List[str]
    kind_distribution: Dict[str, Dict[str, int]]
    error_categories: Dict[str, int]
    incomplete_at_extraction: Dict[str, int] = {}
    flags: List[str] = []


def error_categories(report: ValidationReport) -> Dict[str, int]:
    """Removals per cause: semantic misclassification, each schema rule, cascades"""
    tally = {RuleId.SEM.value: 0}
    tally.update({rule.value: 0 for rule in SCHEMA_RULES})
    for violation in report.phase1_removed + report.phase2_removed:
        tally[violation.rule_id.value] += 1
    tally["cascade"] = len(report.cascaded)
    return tally


def kind_distribution(report: ValidationReport) -> Dict[str, Dict[str, int]]:
    kinds = sorted(set(report.input_kind_counts) | set(report.output_kind_counts))
    return {
        kind: {
            "extracted": report.input_kind_counts.get(kind, 0),
            "validated": report.output_kind_counts.get(kind, 0),
        }
        for kind in kinds
    }


def compute_summary(
    report: ValidationReport,
    ledger: Optional[CostLedger] = None,
    incomplete_at_extraction: Optional[Dict[str, int]] = None,
) -> MetricsSummary:
    """Pure function of the report and ledger"""
    ledger = ledger or CostLedger()
    flags: List[str] = []

    e_in, e_out = report.input_counts.entities, report.output_counts.entities
    r_in, r_out = report.input_counts.relationships, report.output_counts.relationships
    sem_removed = sum(1 for v in report.phase1_removed if v.target_kind == TargetKind.ENTITY)

    accuracy = semantic_accuracy(e_in - sem_removed, e_in)
    compliance = schema_compliance(report.per_rule_pass)
    retention = relationship_retention(r_out, r_in)
    entity_retention = _ratio(e_out, e_in, "validated", "extracted")
    waste = cost_waste_ratio(e_in - e_out, e_in)
    per_entity = cost_per_entity(ledger, e_out)

    for name, pct in (
        ("semantic_accuracy", accuracy),
        ("relationship_retention", retention),
        ("cost_waste_ratio", waste),
    ):
        if pct.degenerate:
            flags.append(f"{name}: zero denominator")
    if per_entity.degenerate:
        flags.append("cost_per_entity: no validated entities")
    if report.unverifiable:
        flags.append(f"{len(report.unverifiable)} entities unverifiable in semantic check")

    return MetricsSummary(
        semantic_accuracy=accuracy.rounded,
        schema_compliance=compliance.rounded,
        relationship_retention=retention.rounded,
        entity_retention=entity_retention.rounded,
        cost_waste_ratio=waste.rounded,
        cost_per_entity=format_currency(per_entity.amount),
        stage2_cost=format_currency(ledger.stage2_cost),
        stage3_cost=format_currency(ledger.stage3_cost),
        total_cost=format_currency(ledger.total_cost),
        price_table_version=ledger.price_table.version,
        per_rule_compliance={
            rule.value: rule_percentage(report.per_rule_pass[rule.value]).rounded for rule in SCHEMA_RULES
        },
        vacuous_rules=list(report.vacuous_rules),
        kind_distribution=kind_distribution(report),
        error_categories=error_categories(report),
        incomplete_at_extraction=dict(sorted((incomplete_at_extraction or {}).items())),
        flags=flags,
    )
