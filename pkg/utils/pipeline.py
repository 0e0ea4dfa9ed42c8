import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from utils.dist_spec import FieldSpec, GenerationPlan, parse_field_spec
from utils.errors import PlanError, SpecError, TransportError
from utils.llm_bridge import LLMClient, TokenUsage
from utils.log import get_logger
from utils.prompts import (
    build_classification_prompt,
    build_enrichment_prompt,
    build_repair_prompt,
    build_spec_prompt,
    extract_fenced_block,
    parse_classification,
)
from utils.sampler import generate_dataset
from utils.schema import DatasetSchema, FieldKind, FieldMeta, Table, attach_samples

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class FieldOutcome:
    """Result of spec inference for one field: a spec, or a placeholder with the last error"""

    field_name: str
    kind: FieldKind
    spec: Optional[FieldSpec]
    attempts: int
    usage: TokenUsage = field(default_factory=TokenUsage)
    placeholder_reason: Optional[str] = None

    @property
    def is_placeholder(self) -> bool:
        return self.spec is None

    def to_document(self) -> Dict[str, Any]:
        doc = {
            "field": self.field_name,
            "kind": self.kind.value,
            "status": "placeholder" if self.is_placeholder else "spec",
            "attempts": self.attempts,
            "usage": self.usage.to_document(),
        }
        if self.placeholder_reason is not None:
            doc["reason"] = self.placeholder_reason
        return doc


@dataclass
class Classification:
    kinds: Dict[str, FieldKind]
    rationales: Dict[str, str] = field(default_factory=dict)
    usage: TokenUsage = field(default_factory=TokenUsage)


@dataclass
class RunReport:
    outcomes: List[FieldOutcome] = field(default_factory=list)
    total_usage: TokenUsage = field(default_factory=TokenUsage)
    elapsed: float = 0.0
    kinds: Dict[str, FieldKind] = field(default_factory=dict)
    classification_rationale: Dict[str, str] = field(default_factory=dict)
    classification_usage: TokenUsage = field(default_factory=TokenUsage)
    enrichment_usage: TokenUsage = field(default_factory=TokenUsage)

    @property
    def placeholders(self) -> List[str]:
        return [o.field_name for o in self.outcomes if o.is_placeholder]

    def to_document(self) -> Dict[str, Any]:
        return {
            "elapsed_seconds": round(self.elapsed, 6),
            "total_usage": self.total_usage.to_document(),
            "enrichment_usage": self.enrichment_usage.to_document(),
            "classification": {
                "usage": self.classification_usage.to_document(),
                "kinds": {name: kind.value for name, kind in self.kinds.items()},
                "rationale": dict(self.classification_rationale),
            },
            "fields": [o.to_document() for o in self.outcomes],
        }


def _map_in_order(fn: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    """Apply fn to every item; results keep input order whatever the worker count"""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- enrichment ----------------------------------------------------------


def enrich_metadata(
    schema: DatasetSchema,
    table: Table,
    s: int,
    llm: LLMClient,
    enabled: bool = True,
    seed: int = 0,
    usage: Optional[TokenUsage] = None,
) -> DatasetSchema:
    """Attach ground-truth samples and let the LLM rewrite each description"""
    if not enabled:
        return schema
    sampled = attach_samples(schema, table, s, seed)
    usage = usage if usage is not None else TokenUsage()

    def enrich(meta: FieldMeta) -> FieldMeta:
        request = build_enrichment_prompt(meta, temperature=llm.config.enrichment_temperature)
        try:
            response = llm.complete(request, usage=usage)
        except TransportError as e:
            logger.warning("enrichment_failed", field=meta.name, error=e.message)
            return meta
        description = response.content.strip()
        if not description:
            logger.warning("enrichment_failed", field=meta.name, error="empty reply")
            return meta
        original = meta.original_description if meta.original_description is not None else meta.description
        return meta.model_copy(update={"description": description, "original_description": original})

    fields = _map_in_order(enrich, list(sampled.fields), llm.max_in_flight)
    return sampled.replace_fields(fields)


# -- classification ------------------------------------------------------


def classify(schema: DatasetSchema, llm: LLMClient) -> Classification:
    """One batched prompt for the whole schema; declared hints win over the reply"""
    hints = {f.name: f.declared_kind for f in schema.fields if f.declared_kind is not None}
    usage = TokenUsage()
    if len(hints) == len(schema.fields):
        return Classification(kinds=dict(hints), usage=usage)

    request = build_classification_prompt(schema, temperature=llm.config.temperature)
    response = llm.complete(request, usage=usage)
    labels, rationales = parse_classification(response.content, schema.field_names)

    kinds = {}
    for name in schema.field_names:
        if name in hints:
            kinds[name] = hints[name]
        elif name in labels:
            kinds[name] = labels[name]
        else:
            logger.warning("field_classification_fallback", field=name, kind=FieldKind.FREE_TEXT.value)
            kinds[name] = FieldKind.FREE_TEXT
    return Classification(kinds=kinds, rationales=rationales, usage=usage)


def classify_fields(schema: DatasetSchema, llm: LLMClient) -> Dict[str, FieldKind]:
    return classify(schema, llm).kinds


# -- spec inference ------------------------------------------------------


def infer_field_spec(field_meta: FieldMeta, kind: FieldKind, llm: LLMClient, n_retries: int, k: int) -> FieldOutcome:
    """Prompt, validate and repair up to n_retries times; placeholder when every attempt fails"""
    if n_retries < 1:
        raise ValueError("n_retries must be at least 1")

    usage = TokenUsage()
    temperature = llm.config.temperature
    request = build_spec_prompt(field_meta, kind, k, temperature=temperature)
    last_error = ""

    for attempt in range(1, n_retries + 1):
        try:
            response = llm.complete(request, usage=usage)
        except TransportError as e:
            previous, last_error = "", f"transport error: {e.message}"
        else:
            previous = response.content
            try:
                spec = parse_field_spec(extract_fenced_block(response.content), k_max=k)
                if spec.kind != kind:
                    raise SpecError(f"kind: expected {kind.value!r}, got {spec.kind.value!r}")
                if spec.placeholder:
                    raise SpecError("placeholder: a full spec is required")
                return FieldOutcome(field_meta.name, kind, spec.named(field_meta.name), attempt, usage)
            except SpecError as e:
                last_error = e.message

        logger.warning("spec_attempt_failed", field=field_meta.name, attempt=attempt, error=last_error)
        request = build_repair_prompt(field_meta, previous, last_error, kind, k, temperature=temperature)

    logger.warning("field_placeholder", field=field_meta.name, attempts=n_retries, reason=last_error)
    return FieldOutcome(field_meta.name, kind, None, n_retries, usage, placeholder_reason=last_error)


def infer_all_specs(
    schema: DatasetSchema,
    kinds: Dict[str, FieldKind],
    llm: LLMClient,
    n_retries: int,
    k: int,
) -> List[FieldOutcome]:
    def infer(meta: FieldMeta) -> FieldOutcome:
        return infer_field_spec(meta, kinds[meta.name], llm, n_retries, k)

    return _map_in_order(infer, list(schema.fields), llm.max_in_flight)


def build_plan(schema: DatasetSchema, outcomes: Sequence[FieldOutcome], master_seed: int) -> GenerationPlan:
    """Join outcomes into a plan in schema field order"""
    by_name = {o.field_name: o for o in outcomes}
    unknown = [name for name in by_name if name not in schema.field_names]
    if unknown:
        raise PlanError(f"outcome for unknown field {unknown[0]!r}")

    specs = []
    for name in schema.field_names:
        if name not in by_name:
            raise PlanError(f"no outcome for field {name!r}")
        outcome = by_name[name]
        specs.append(FieldSpec.placeholder_for(name, outcome.kind) if outcome.is_placeholder else outcome.spec)
    return GenerationPlan(schema_name=schema.name, specs=tuple(specs), master_seed=master_seed)


def plan_dataset(
    schema: DatasetSchema,
    llm: LLMClient,
    n_retries: int,
    k: int,
    master_seed: int = 0,
    enrichment_usage: Optional[TokenUsage] = None,
) -> Tuple[GenerationPlan, RunReport]:
    """Classify, infer every field's spec and assemble the plan"""
    started = time.perf_counter()
    classification = classify(schema, llm)
    outcomes = infer_all_specs(schema, classification.kinds, llm, n_retries, k)
    plan = build_plan(schema, outcomes, master_seed)

    total = TokenUsage()
    if enrichment_usage is not None:
        total.add(enrichment_usage)
    total.add(classification.usage)
    for outcome in outcomes:
        total.add(outcome.usage)

    report = RunReport(
        outcomes=outcomes,
        total_usage=total,
        elapsed=time.perf_counter() - started,
        kinds=classification.kinds,
        classification_rationale=classification.rationales,
        classification_usage=classification.usage,
        enrichment_usage=enrichment_usage if enrichment_usage is not None else TokenUsage(),
    )
    if report.placeholders:
        logger.warning("plan_has_placeholders", fields=report.placeholders)
    return plan, report


def synthesize(plan: GenerationPlan, n: int, workers: int = 1) -> Tuple[Table, RunReport]:
    """Sample n rows locally; no LLM calls, so the report's usage stays zero"""
    started = time.perf_counter()
    table = generate_dataset(plan, n, workers=workers)
    return table, RunReport(elapsed=time.perf_counter() - started)


def estimate_direct_tokens(schema: DatasetSchema, tokens_per_value: float, records: int) -> int:
    """Output tokens a record-by-record LLM generator would spend"""
    return int(round(tokens_per_value * len(schema.fields) * records))
