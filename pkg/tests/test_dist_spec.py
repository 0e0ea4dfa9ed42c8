import json

import pytest

from utils.dist_spec import (
    CategoricalSpec,
    FieldSpec,
    GenerationPlan,
    NumericalSpec,
    TextSpec,
    field_spec_to_document,
    parse_field_spec,
    parse_plan,
    serialize_plan,
)
from utils.errors import PlanError, SpecError
from utils.rng import derive_field_seed
from utils.schema import FieldKind


def _reference_fnv(master_seed: int, name: str) -> int:
    data = bytearray(master_seed.to_bytes(8, "little"))
    data.append(0x1F)
    data.extend(name.encode("utf-8"))
    h = 14695981039346656037
    for b in data:
        h = ((h ^ b) * 1099511628211) % (1 << 64)
    return h


def test_normal_spec():
    spec = parse_field_spec('{"kind":"numerical","distribution":{"normal":{"mean":0,"std":1}}}')
    assert spec.kind == FieldKind.NUMERICAL
    assert isinstance(spec.body, NumericalSpec)
    assert spec.body.distribution.tag == "normal"
    assert spec.body.distribution.params.mean == 0
    assert spec.body.distribution.params.std == 1
    assert spec.body.rounding == "none"


def test_probabilities_must_sum_to_one():
    text = json.dumps({"kind": "categorical", "categories": [{"value": "A", "prob": 0.5}, {"value": "B", "prob": 0.4}]})
    with pytest.raises(SpecError) as info:
        parse_field_spec(text)
    assert "probabilities sum to 0.9" in info.value.message


def test_categorical_uniform_fallback():
    spec = parse_field_spec('{"kind":"categorical","categories":[{"value":"A"},{"value":"B"}]}')
    assert isinstance(spec.body, CategoricalSpec)
    assert spec.body.probabilities == (0.5, 0.5)


def test_categorical_bare_values():
    spec = parse_field_spec('{"kind":"categorical","categories":["x","y","z"]}')
    assert spec.body.values == ("x", "y", "z")


@pytest.mark.parametrize(
    "doc, fragment",
    [
        ({"kind": "categorical", "categories": ["a", "a"]}, "more than once"),
        ({"kind": "categorical", "categories": [{"value": "a", "prob": 1.0}, {"value": "b"}]}, "every category"),
        ({"kind": "categorical", "categories": [str(i) for i in range(11)]}, "at most 10"),
        ({"kind": "categorical", "categories": []}, "categories"),
        ({"kind": "numerical", "distribution": {"normal": {"mean": 0, "std": 0}}}, "std"),
        ({"kind": "numerical", "distribution": {"lognormal": {"mu": 0, "sigma": -1}}}, "sigma"),
        ({"kind": "numerical", "distribution": {"exponential": {"rate": 0}}}, "rate"),
        ({"kind": "numerical", "distribution": {"poisson": {"lambda": 0}}}, "lambda"),
        ({"kind": "numerical", "distribution": {"uniform": {"min": 2, "max": 1}}}, "greater than max"),
        ({"kind": "numerical", "distribution": {"uniform_int": {"min": 5, "max": 1}}}, "greater than max"),
        ({"kind": "numerical", "distribution": {"normal": {"mean": 0, "std": 1}}, "clamp": [3, 1]}, "clamp"),
        ({"kind": "numerical", "distribution": {"normal": {"mean": 0, "std": 1}}, "null_rate": 1.5}, "null_rate"),
        ({"kind": "numerical", "distribution": {"normal": {"mean": 0, "std": 1}}, "rounding": {"decimals": 12}}, "decimals"),
        ({"kind": "numerical", "distribution": {"gamma": {"k": 1}}}, "single key"),
        ({"kind": "numerical", "distribution": {"normal": {"mean": 0, "std": 1}, "uniform": {"min": 0, "max": 1}}}, "single key"),
        ({"kind": "free_text", "pattern": {"chars": {"class": "emoji", "min_len": 1, "max_len": 2}}}, "class"),
        ({"kind": "free_text", "pattern": {"chars": {"class": "digits", "min_len": 3, "max_len": 2}}}, "min_len"),
        ({"kind": "free_text", "pattern": {"int_range": {"lo": 3, "hi": 2}}}, "lo 3"),
        ({"kind": "free_text", "pattern": {"seq": []}}, "seq"),
        ({"kind": "free_text", "pattern": {"one_of": {"branches": [{"literal": "a"}], "weights": [0.5, 0.5]}}}, "2 weights"),
        ({"kind": "free_text", "pattern": {"one_of": [{"literal": "a"}, {"literal": "b"}]}, "unique": True, "null_rate": 0.1}, "unique"),
        ({"kind": "ordinal"}, "kind"),
        ({"spec_version": 2, "kind": "numerical"}, "spec_version"),
    ],
)
def test_invalid_specs_rejected(doc, fragment):
    with pytest.raises(SpecError) as info:
        parse_field_spec(json.dumps(doc))
    assert fragment in info.value.message


def test_syntax_error_has_position():
    with pytest.raises(SpecError) as info:
        parse_field_spec('{"kind": "numerical",\n  "distribution": }')
    assert info.value.line == 2
    assert info.value.column is not None
    assert "line 2" in info.value.message


def test_category_cap_is_configurable():
    doc = json.dumps({"kind": "categorical", "categories": [str(i) for i in range(12)]})
    assert len(parse_field_spec(doc, k_max=12).body.categories) == 12
    assert len(parse_field_spec(doc, k_max=None).body.categories) == 12


def test_nested_text_pattern():
    doc = {
        "kind": "free_text",
        "unique": True,
        "pattern": {"seq": [
            {"literal": "INV-"},
            {"one_of": {"branches": [{"literal": "A"}, {"chars": {"class": "upper", "min_len": 2, "max_len": 2}}],
                        "weights": [0.25, 0.75]}},
            {"int_range": {"lo": 10, "hi": 99}},
        ]},
    }
    spec = parse_field_spec(json.dumps(doc))
    assert isinstance(spec.body, TextSpec)
    assert spec.body.unique
    parts = spec.body.pattern.seq
    assert [p.tag for p in parts] == ["literal", "one_of", "int_range"]
    assert parts[1].one_of.branches[1].chars.char_class == "upper"


def test_field_spec_document_round_trip():
    doc = {
        "spec_version": 1,
        "field_name": "ref",
        "kind": "free_text",
        "pattern": {"seq": [{"literal": "R"}, {"chars": {"class": "hex", "min_len": 4, "max_len": 4}}]},
        "unique": True,
        "null_rate": 0.0,
    }
    spec = parse_field_spec(json.dumps(doc))
    assert field_spec_to_document(spec) == doc
    poisson = parse_field_spec('{"kind":"numerical","distribution":{"poisson":{"lambda":3}}}')
    assert field_spec_to_document(poisson)["distribution"] == {"poisson": {"lambda": 3.0}}


def test_body_must_match_kind():
    with pytest.raises(ValueError):
        FieldSpec(field_name="x", kind=FieldKind.NUMERICAL, body=CategoricalSpec(categories=["a"]))


def test_plan_round_trip(tiny_plan):
    text = serialize_plan(tiny_plan)
    assert text.endswith("\n")
    again = parse_plan(text)
    assert again == tiny_plan
    assert serialize_plan(again) == text
    assert json.loads(text)["master_seed"] == 7


def test_plan_with_placeholder_and_new_seed(tiny_plan):
    specs = tiny_plan.specs + (FieldSpec.placeholder_for("notes", FieldKind.FREE_TEXT),)
    plan = GenerationPlan(schema_name="tiny", specs=specs, master_seed=1).with_seed(99)
    assert plan.master_seed == 99
    again = parse_plan(serialize_plan(plan))
    assert again.specs[-1].placeholder
    assert again.field_names == ("age", "color", "id", "notes")


def test_plan_errors_name_the_spec():
    bad = {"specs": [{"field_name": "x", "kind": "categorical", "categories": [{"value": "a", "prob": 0.3}]}]}
    with pytest.raises(PlanError, match=r"specs\[0\] \(x\)"):
        parse_plan(json.dumps(bad))
    dupes = {"specs": [
        {"field_name": "x", "kind": "categorical", "categories": ["a"]},
        {"field_name": "x", "kind": "categorical", "categories": ["b"]},
    ]}
    with pytest.raises(PlanError, match="distinct"):
        parse_plan(json.dumps(dupes))


def test_parse_plan_accepts_any_category_count():
    wide = {"master_seed": 3, "specs": [
        {"field_name": "code", "kind": "categorical", "categories": [f"c{i}" for i in range(12)]},
    ]}
    plan = parse_plan(json.dumps(wide))
    assert len(plan.specs[0].body.categories) == 12
    with pytest.raises(PlanError, match="at most 5"):
        parse_plan(json.dumps(wide), k_max=5)


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_with_seed_rejects_out_of_range(tiny_plan, seed):
    with pytest.raises(PlanError, match="master_seed"):
        tiny_plan.with_seed(seed)


def test_derive_field_seed_matches_reference():
    assert derive_field_seed(42, "age") == _reference_fnv(42, "age")
    assert derive_field_seed(42, "age") == derive_field_seed(42, "age")
    assert derive_field_seed(0, "a") != derive_field_seed(0, "b")
    assert derive_field_seed(2**64 - 1, "émoji") == _reference_fnv(2**64 - 1, "émoji")
