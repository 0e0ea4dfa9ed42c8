"""Prompt builders for every LLM step and the parsers for their replies.

Builders are pure: the same field, kind and k always produce the same request.
"""

import json
import re
from typing import Dict, List, Optional, Sequence, Tuple

from utils.config import EndpointConfig
from utils.dist_spec import DEFAULT_K_MAX
from utils.llm_bridge import ChatRequest
from utils.schema import KIND_TOKENS, DatasetSchema, FieldKind, FieldMeta

# sampling temperatures come from the endpoint settings
_ENDPOINT_DEFAULTS = EndpointConfig()

CURATOR_ROLE = (
    "You are a dataset curator. You write field metadata that helps a data engineer "
    "generate realistic synthetic values."
)
ENGINEER_ROLE = "You are a data engineer preparing a synthetic data generator."
SPEC_ROLE = (
    "You are a data engineer. You describe how to sample one field of a synthetic dataset "
    "as a small JSON document that a local interpreter runs."
)

_FENCE = re.compile(r"```(?:[\w+-]*[ \t]*\n)?(.*?)```", re.DOTALL)


def _samples_section(samples: Sequence[str]) -> List[str]:
    if not samples:
        return []
    return ["", f"Samples ({len(samples)}):"] + [f"- {sample}" for sample in samples]


def build_enrichment_prompt(field: FieldMeta, temperature: float = _ENDPOINT_DEFAULTS.enrichment_temperature) -> ChatRequest:
    lines = [
        f"Field name: {field.name}",
        f"Original description: {field.description or '(none)'}",
    ]
    lines += _samples_section(field.samples)
    lines += [
        "",
        "Write a concise description tailored for data generation: what the field holds, "
        "its type, its typical range or categories and its format.",
        "Reply with the description only, as one paragraph without code fences.",
    ]
    return ChatRequest(system=CURATOR_ROLE, user="\n".join(lines), temperature=temperature)


def build_classification_prompt(schema: DatasetSchema, temperature: float = _ENDPOINT_DEFAULTS.temperature) -> ChatRequest:
    lines = [
        "Assign each field of the dataset below to exactly one generation group:",
        "- numerical: quantities sampled from a numeric distribution",
        "- categorical: a small set of recurring labels",
        "- free_text: identifiers, names, addresses and other open-ended text",
        "",
    ]
    if schema.name:
        lines.append(f"Dataset: {schema.name}")
    lines.append("Fields:")
    for f in schema.fields:
        lines.append(f"- {f.name}: {f.description or '(no description)'}")
        if f.samples:
            lines.append(f"  samples: {json.dumps(list(f.samples[:5]), ensure_ascii=False)}")
    lines += [
        "",
        "Reply with one fenced JSON block mapping every field name to its group "
        "and a one-line rationale, for example:",
        "```json",
        '{"<field name>": {"kind": "numerical", "rationale": "ages are whole numbers of years"}}',
        "```",
        f"Allowed kind values: {', '.join(KIND_TOKENS)}.",
    ]
    return ChatRequest(system=ENGINEER_ROLE, user="\n".join(lines), temperature=temperature)


_STRATEGY = {
    FieldKind.NUMERICAL: "Estimate the distribution type and its parameters from the description and samples.",
    FieldKind.CATEGORICAL: (
        "Identify the most frequent categories, at most {k} categories, "
        "with their probabilities where you can estimate them."
    ),
    FieldKind.FREE_TEXT: "Compose a pattern that produces realistic values matching the field metadata.",
}


def format_instructions(kind: FieldKind, k: int = DEFAULT_K_MAX) -> str:
    """The DSL summary and reply format for one field kind"""
    if kind == FieldKind.NUMERICAL:
        example = (
            '{"kind": "numerical", "distribution": {"normal": {"mean": 40.0, "std": 12.0}}, '
            '"rounding": "integer", "clamp": [17, 90], "null_rate": 0.0}'
        )
        rules = [
            "Supported distributions: uniform{min,max}, normal{mean,std}, lognormal{mu,sigma}, "
            "exponential{rate}, poisson{lambda}, uniform_int{min,max}.",
            'rounding is "none", "integer" or {"decimals": d} with d from 0 to 9. '
            "clamp and null_rate are optional.",
        ]
    elif kind == FieldKind.CATEGORICAL:
        example = (
            '{"kind": "categorical", "categories": [{"value": "A", "prob": 0.6}, '
            '{"value": "B", "prob": 0.4}], "null_rate": 0.0}'
        )
        rules = [
            f"List at most {k} categories with distinct values.",
            "Give every category a prob, summing to 1, or give none for a uniform split.",
        ]
    else:
        example = (
            '{"kind": "free_text", "unique": false, "pattern": {"seq": [{"literal": "ID-"}, '
            '{"chars": {"class": "digits", "min_len": 6, "max_len": 6}}]}, "null_rate": 0.0}'
        )
        rules = [
            'Pattern nodes: {"literal": s}, {"one_of": {"branches": [node, ...], "weights": [p, ...]}}, '
            '{"chars": {"class": digits|upper|lower|alnum|hex, "min_len": a, "max_len": b}}, '
            '{"int_range": {"lo": a, "hi": b}}, {"counter": {"start": a, "width": w}}, {"seq": [node, ...]}.',
            "Compose nodes freely; weights are optional and must sum to 1.",
            'Set "unique": true for identifier-like fields whose values must never repeat; '
            "a unique field cannot have a null_rate above 0.",
        ]
    lines = ["Reply with exactly one fenced JSON block of this form:", "```json", example, "```"]
    lines += rules
    lines.append("Output only the JSON block.")
    return "\n".join(lines)


def build_spec_prompt(
    field: FieldMeta,
    kind: FieldKind,
    k: int = DEFAULT_K_MAX,
    temperature: float = _ENDPOINT_DEFAULTS.temperature,
) -> ChatRequest:
    lines = [
        f"Field: {field.name}",
        f"Description: {field.description or '(none)'}",
        f"Group: {kind.value}",
    ]
    lines += _samples_section(field.samples)
    lines += ["", _STRATEGY[kind].format(k=k), "", format_instructions(kind, k)]
    return ChatRequest(system=SPEC_ROLE, user="\n".join(lines), temperature=temperature)


def build_repair_prompt(
    field: FieldMeta,
    previous_text: str,
    error: str,
    kind: FieldKind = FieldKind.FREE_TEXT,
    k: int = DEFAULT_K_MAX,
    temperature: float = _ENDPOINT_DEFAULTS.temperature,
) -> ChatRequest:
    lines = [
        f"Your previous spec for field {field.name} ({kind.value}) was rejected.",
        "",
        "Previous reply:",
        "-----",
        previous_text,
        "-----",
        f"Validator error: {error}",
        "",
        "Fix the problem and send the corrected document.",
        "",
        format_instructions(kind, k),
    ]
    return ChatRequest(system=SPEC_ROLE, user="\n".join(lines), temperature=temperature)


def extract_fenced_block(content: str) -> str:
    """First fenced block's body, or the whole reply trimmed"""
    match = _FENCE.search(content)
    if match:
        return match.group(1).strip()
    return content.strip()


def _label_of(entry) -> Tuple[Optional[str], str]:
    if isinstance(entry, str):
        return entry, ""
    if isinstance(entry, dict):
        label = entry.get("kind", entry.get("label"))
        rationale = entry.get("rationale", "")
        return (label if isinstance(label, str) else None), (rationale if isinstance(rationale, str) else "")
    return None, ""


def parse_classification(content: str, field_names: Sequence[str]) -> Tuple[Dict[str, FieldKind], Dict[str, str]]:
    """Labels and rationales for the fields the reply names with a valid kind token"""
    try:
        doc = json.loads(extract_fenced_block(content))
    except json.JSONDecodeError:
        return {}, {}
    if not isinstance(doc, dict):
        return {}, {}

    labels, rationales = {}, {}
    for name in field_names:
        if name not in doc:
            continue
        label, rationale = _label_of(doc[name])
        if label is None:
            continue
        token = label.strip().lower().replace("-", "_").replace(" ", "_")
        if token not in KIND_TOKENS:
            continue
        labels[name] = FieldKind(token)
        if rationale:
            rationales[name] = rationale
    return labels, rationales
