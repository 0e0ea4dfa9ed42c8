import json

import pytest
from structlog.testing import capture_logs

from utils.config import EndpointConfig
from utils.dist_spec import CategoricalSpec
from utils.errors import PlanError, TransportError
from utils.llm_bridge import ChatResponse, FixtureTransport, LLMClient, TokenUsage
from utils.pipeline import (
    FieldOutcome,
    build_plan,
    classify,
    classify_fields,
    enrich_metadata,
    estimate_direct_tokens,
    infer_field_spec,
    plan_dataset,
    synthesize,
)
from utils.schema import DatasetSchema, FieldKind, FieldMeta, Table

VALID_CATEGORICAL = '```json\n{"kind": "categorical", "categories": [{"value": "M", "prob": 0.5}, {"value": "F", "prob": 0.5}]}\n```'
INVALID_CATEGORICAL = '```json\n{"kind": "categorical", "categories": [{"value": "M", "prob": 0.5}, {"value": "F", "prob": 0.4}]}\n```'
VALID_NUMERICAL = '```json\n{"kind": "numerical", "distribution": {"normal": {"mean": 40, "std": 10}}, "rounding": "integer"}\n```'
VALID_TEXT = '```json\n{"kind": "free_text", "pattern": {"chars": {"class": "lower", "min_len": 3, "max_len": 8}}}\n```'

SEX = FieldMeta(name="sex", description="Biological sex")


def _schema(*fields):
    return DatasetSchema(name="demo", fields=tuple(fields))


def test_classify_uses_reply_and_hints(make_client):
    schema = _schema(
        FieldMeta(name="age"),
        FieldMeta(name="sex", declared_kind=FieldKind.FREE_TEXT),
        FieldMeta(name="notes"),
    )
    reply = json.dumps({"age": {"kind": "numerical", "rationale": "years"}, "sex": "categorical"})
    client = make_client([reply])
    with capture_logs() as logs:
        result = classify(schema, client)
    assert result.kinds == {"age": FieldKind.NUMERICAL, "sex": FieldKind.FREE_TEXT, "notes": FieldKind.FREE_TEXT}
    assert result.rationales["age"] == "years"
    assert result.usage.calls == 1
    fallbacks = [e for e in logs if e["event"] == "field_classification_fallback"]
    assert [e["field"] for e in fallbacks] == ["notes"]
    assert fallbacks[0]["log_level"] == "warning"


def test_classify_skips_call_when_every_field_is_declared(make_client):
    schema = _schema(FieldMeta(name="age", declared_kind=FieldKind.NUMERICAL))
    client = make_client([])
    result = classify(schema, client)
    assert result.kinds == {"age": FieldKind.NUMERICAL}
    assert client.transport.requests == []


def test_infer_field_spec_first_try(make_client):
    client = make_client([VALID_CATEGORICAL])
    outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=3, k=10)
    assert outcome.attempts == 1
    assert isinstance(outcome.spec.body, CategoricalSpec)
    assert outcome.spec.field_name == "sex"
    assert outcome.usage.to_document() == {"prompt_tokens": 10, "completion_tokens": 5, "calls": 1}


def test_infer_field_spec_repairs(make_client):
    client = make_client([INVALID_CATEGORICAL, "no json here", VALID_CATEGORICAL])
    with capture_logs() as logs:
        outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=3, k=10)
    assert outcome.attempts == 3
    assert not outcome.is_placeholder
    requests = client.transport.requests
    assert len(requests) == 3
    assert "Validator error: probabilities sum to 0.9" in requests[1].user
    assert INVALID_CATEGORICAL in requests[1].user
    assert "no json here" in requests[2].user
    assert [e["attempt"] for e in logs if e["event"] == "spec_attempt_failed"] == [1, 2]


def test_infer_field_spec_rejects_wrong_kind(make_client):
    client = make_client([VALID_NUMERICAL, VALID_CATEGORICAL])
    outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=2, k=10)
    assert outcome.attempts == 2
    assert "kind: expected 'categorical'" in client.transport.requests[1].user


def test_infer_field_spec_enforces_category_budget(make_client):
    many = json.dumps({"kind": "categorical", "categories": [str(i) for i in range(5)]})
    client = make_client([many, VALID_CATEGORICAL])
    outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=2, k=3)
    assert outcome.attempts == 2
    assert "at most 3" in client.transport.requests[1].user


def test_infer_field_spec_honours_wide_category_budget(make_client):
    wide = json.dumps({"kind": "categorical", "categories": [f"c{i}" for i in range(15)]})
    client = make_client([wide])
    outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=3, k=20)
    assert outcome.attempts == 1
    assert len(outcome.spec.body.categories) == 15
    assert "at most 20" in client.transport.requests[0].user


def test_infer_field_spec_placeholder_after_exhaustion(make_client):
    client = make_client([INVALID_CATEGORICAL] * 3)
    with capture_logs() as logs:
        outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=3, k=10)
    assert outcome.is_placeholder
    assert outcome.attempts == 3
    assert "probabilities sum to 0.9" in outcome.placeholder_reason
    assert len(client.transport.requests) == 3
    assert any(e["event"] == "field_placeholder" for e in logs)
    assert outcome.to_document()["status"] == "placeholder"


class _FailFirst:
    def __init__(self, reply):
        self.reply = reply
        self.requests = []

    def send(self, config, request):
        self.requests.append(request)
        if len(self.requests) == 1:
            raise TransportError("connection reset")
        return ChatResponse(content=self.reply)


def test_transport_failure_counts_as_an_attempt():
    transport = _FailFirst(VALID_CATEGORICAL)
    client = LLMClient(EndpointConfig(transport_retries=0), transport)
    outcome = infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=2, k=10)
    assert outcome.attempts == 2
    assert "transport error: connection reset" in transport.requests[1].user


def test_invalid_retries_rejected(make_client):
    with pytest.raises(ValueError):
        infer_field_spec(SEX, FieldKind.CATEGORICAL, make_client([]), n_retries=0, k=10)


def test_build_plan_follows_schema_order():
    schema = _schema(FieldMeta(name="a"), FieldMeta(name="b"))
    outcomes = [
        FieldOutcome("b", FieldKind.FREE_TEXT, None, 3, placeholder_reason="bad"),
        FieldOutcome("a", FieldKind.FREE_TEXT, None, 3, placeholder_reason="bad"),
    ]
    plan = build_plan(schema, outcomes, master_seed=4)
    assert plan.field_names == ("a", "b")
    assert all(spec.placeholder for spec in plan.specs)
    assert plan.master_seed == 4


def test_build_plan_missing_or_unknown_outcome():
    schema = _schema(FieldMeta(name="a"), FieldMeta(name="b"))
    with pytest.raises(PlanError, match="no outcome for field 'b'"):
        build_plan(schema, [FieldOutcome("a", FieldKind.FREE_TEXT, None, 1)], 0)
    with pytest.raises(PlanError, match="unknown field 'c'"):
        build_plan(schema, [FieldOutcome("c", FieldKind.FREE_TEXT, None, 1)], 0)


def test_plan_dataset_totals_and_placeholder_column(make_client):
    schema = _schema(FieldMeta(name="age"), SEX, FieldMeta(name="nick"))
    classification = json.dumps({"age": "numerical", "sex": "categorical", "nick": "free_text"})
    client = make_client([classification, VALID_NUMERICAL] + [INVALID_CATEGORICAL] * 2 + [VALID_TEXT])
    enrichment = TokenUsage(100, 50, 2)

    plan, report = plan_dataset(schema, client, n_retries=2, k=10, master_seed=3, enrichment_usage=enrichment)

    assert plan.field_names == ("age", "sex", "nick")
    assert report.placeholders == ["sex"]
    assert report.total_usage.to_document() == {"prompt_tokens": 150, "completion_tokens": 75, "calls": 7}
    assert report.classification_usage.calls == 1
    assert [o.attempts for o in report.outcomes] == [1, 2, 1]
    doc = report.to_document()
    assert doc["classification"]["kinds"]["sex"] == "categorical"

    table, gen_report = synthesize(plan, 25)
    assert table.column("sex") == ("",) * 25
    assert all(cell != "" for cell in table.column("nick"))
    assert gen_report.total_usage.total_tokens == 0


def test_synthesize_usage_does_not_depend_on_n(tiny_plan):
    small, small_report = synthesize(tiny_plan, 10)
    large, large_report = synthesize(tiny_plan, 5000, workers=2)
    assert small_report.total_usage == large_report.total_usage == TokenUsage()
    assert large.column("age")[:10] == small.column("age")


def test_enrich_metadata_rewrites_descriptions(make_client, adult_schema, adult_table):
    replies = [f"Description {i}" for i in range(len(adult_schema.fields))]
    client = make_client(replies)
    usage = TokenUsage()
    enriched = enrich_metadata(adult_schema, adult_table, 5, client, seed=1, usage=usage)

    assert enriched.field_names == adult_schema.field_names
    assert [f.description for f in enriched.fields] == replies
    age = enriched.field("age")
    assert age.original_description == "Age of the individual"
    assert len(age.samples) == 5
    assert usage.calls == len(replies)
    first = client.transport.requests[0]
    assert "Field name: age" in first.user
    assert "Samples (5):" in first.user


def test_enrich_metadata_keeps_field_on_failure(make_client):
    schema = _schema(FieldMeta(name="a", description="first"), FieldMeta(name="b", description="second"))
    table = Table.from_columns([("a", ["1", "2"]), ("b", ["x", "y"])])
    client = make_client([ChatResponse(content="   ")])
    with capture_logs() as logs:
        enriched = enrich_metadata(schema, table, 2, client)
    assert [f.description for f in enriched.fields] == ["first", "second"]
    assert [e["field"] for e in logs if e["event"] == "enrichment_failed"] == ["a", "b"]


def test_enrich_metadata_disabled(make_client, adult_schema, adult_table):
    client = make_client([])
    assert enrich_metadata(adult_schema, adult_table, 5, client, enabled=False) == adult_schema
    assert client.transport.requests == []


def test_estimate_direct_tokens(adult_schema):
    assert estimate_direct_tokens(adult_schema, 2.0, 1000) == 28_000


def test_classify_fields_returns_kinds_only(make_client):
    schema = _schema(FieldMeta(name="age"), SEX)
    client = make_client(['```json\n{"age": "numerical", "sex": {"kind": "categorical"}}\n```'])
    assert classify_fields(schema, client) == {"age": FieldKind.NUMERICAL, "sex": FieldKind.CATEGORICAL}


def test_requests_use_configured_temperatures():
    config = EndpointConfig(temperature=0.3, enrichment_temperature=0.9)
    transport = FixtureTransport([ChatResponse(content=VALID_CATEGORICAL), ChatResponse(content="Sex at birth")])
    client = LLMClient(config, transport)
    infer_field_spec(SEX, FieldKind.CATEGORICAL, client, n_retries=1, k=10)
    enrich_metadata(_schema(SEX), Table.from_columns([("sex", ["M", "F"])]), 2, client)
    assert [r.temperature for r in transport.requests] == [0.3, 0.9]
