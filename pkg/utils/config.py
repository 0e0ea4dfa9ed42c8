import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.errors import ConfigError

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "llama-3-70b-instruct"
DEFAULT_API_KEY_ENV = "FASTGEN_API_KEY"

# Generation defaults: s samples per field, n repair attempts, top-k categories
DEFAULT_SAMPLES = 100
DEFAULT_RETRIES = 3
DEFAULT_TOP_K = 10


class EndpointConfig(BaseModel):
    """Chat-completion endpoint settings; the model is configuration, not code"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    base_url: str = DEFAULT_BASE_URL
    model_name: str = DEFAULT_MODEL
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    enrichment_temperature: float = Field(default=0.7, ge=0.0, le=2.0)
    max_output_tokens: int = Field(default=1024, ge=1)
    timeout: float = Field(default=60.0, gt=0)
    transport_retries: int = Field(default=2, ge=0)
    max_in_flight: int = Field(default=1, ge=1)


class MetricConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    ngram_order: int = Field(default=1, ge=1)
    kl_bins: int = Field(default=20, ge=2)
    kl_epsilon: float = Field(default=1e-6, gt=0.0, le=1.0)
    ot_category_cap: int = Field(default=100, ge=2)


class GenerationDefaults(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    samples: int = Field(default=DEFAULT_SAMPLES, ge=1)
    retries: int = Field(default=DEFAULT_RETRIES, ge=1)
    top_k: int = Field(default=DEFAULT_TOP_K, ge=1)


class CliConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    endpoint: EndpointConfig = Field(default_factory=EndpointConfig)
    defaults: GenerationDefaults = Field(default_factory=GenerationDefaults)
    seed: int = Field(default=0, ge=0, lt=2**64)
    metric: MetricConfig = Field(default_factory=MetricConfig)


def _env_endpoint() -> Dict[str, Any]:
    """Endpoint values supplied through the environment"""
    values = {}
    if os.getenv("FASTGEN_BASE_URL"):
        values["base_url"] = os.getenv("FASTGEN_BASE_URL")
    if os.getenv("FASTGEN_MODEL"):
        values["model_name"] = os.getenv("FASTGEN_MODEL")
    return values


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Layer update over base; None values in update never override"""
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict):
            current = merged.get(key)
            merged[key] = _merge(current if isinstance(current, dict) else {}, value)
        elif value is not None:
            merged[key] = value
    return merged


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> CliConfig:
    """Build the run configuration: flags > config file > environment > built-in defaults"""
    load_dotenv()

    raw: Dict[str, Any] = {"endpoint": _env_endpoint()}
    if path:
        try:
            file_values = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}")
        except UnicodeDecodeError:
            raise ConfigError(f"config file {path} is not valid UTF-8")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: line {e.lineno} column {e.colno}: {e.msg}")
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        raw = _merge(raw, file_values)

    if overrides:
        raw = _merge(raw, overrides)

    try:
        return CliConfig.model_validate(raw)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid configuration: {problems}")


def get_api_key(endpoint: EndpointConfig) -> str:
    """Read the bearer token from the environment variable the endpoint names"""
    load_dotenv()
    return os.getenv(endpoint.api_key_env, "")
