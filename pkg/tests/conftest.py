import json
from pathlib import Path

import pytest
import structlog

from utils.config import EndpointConfig
from utils.dist_spec import parse_plan
from utils.llm_bridge import ChatResponse, FixtureTransport, LLMClient
from utils.schema import parse_schema, parse_table

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture(autouse=True)
def _reset_logging():
    yield
    structlog.reset_defaults()


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture
def adult_schema():
    return parse_schema((DATA_DIR / "adult_schema.json").read_text(encoding="utf-8"))


@pytest.fixture
def adult_table():
    return parse_table((DATA_DIR / "adult_sample.csv").read_text(encoding="utf-8"))


def fixture_token_sum(path: Path) -> dict:
    entries = json.loads(path.read_text(encoding="utf-8"))
    return {
        "prompt_tokens": sum(e.get("prompt_tokens", 0) for e in entries),
        "completion_tokens": sum(e.get("completion_tokens", 0) for e in entries),
        "calls": len(entries),
    }


@pytest.fixture
def make_client():
    """LLMClient over a FixtureTransport replaying the given replies"""

    def build(replies, transport_retries: int = 0):
        responses = [
            r if isinstance(r, ChatResponse) else ChatResponse(content=r, prompt_tokens=10, completion_tokens=5)
            for r in replies
        ]
        transport = FixtureTransport(responses)
        return LLMClient(EndpointConfig(transport_retries=transport_retries), transport)

    return build


TINY_PLAN = """
{
  "spec_version": 1,
  "schema_name": "tiny",
  "master_seed": 7,
  "specs": [
    {"spec_version": 1, "field_name": "age", "kind": "numerical",
     "distribution": {"normal": {"mean": 40, "std": 10}}, "rounding": "integer", "clamp": [18, 90]},
    {"spec_version": 1, "field_name": "color", "kind": "categorical",
     "categories": [{"value": "red", "prob": 0.5}, {"value": "green", "prob": 0.3}, {"value": "blue", "prob": 0.2}]},
    {"spec_version": 1, "field_name": "id", "kind": "free_text", "unique": true,
     "pattern": {"seq": [{"literal": "ID-"}, {"counter": {"start": 1, "width": 5}}]}}
  ]
}
"""


@pytest.fixture
def tiny_plan():
    return parse_plan(TINY_PLAN)
