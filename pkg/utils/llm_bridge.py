import json
import threading
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence

import requests
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.config import EndpointConfig, get_api_key
from utils.errors import (
    ConfigError,
    FixtureExhausted,
    HTTPStatusError,
    MalformedResponseError,
    TransportError,
)
from utils.log import get_logger

logger = get_logger(__name__)

BACKOFF_BASE = 0.5  # seconds, doubled per retry


class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    system: str = ""
    user: str = Field(min_length=1)
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    max_output_tokens: int = Field(default=1024, ge=1)

    def messages(self) -> List[Dict[str, str]]:
        messages = []
        if self.system:
            messages.append({"role": "system", "content": self.system})
        messages.append({"role": "user", "content": self.user})
        return messages


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: str
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)


class TokenUsage:
    """Thread-safe running total of LLM token spend"""

    def __init__(self, prompt_tokens: int = 0, completion_tokens: int = 0, calls: int = 0):
        self._lock = threading.Lock()
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens
        self.calls = calls

    def record(self, response: ChatResponse) -> None:
        with self._lock:
            self.prompt_tokens += response.prompt_tokens
            self.completion_tokens += response.completion_tokens
            self.calls += 1

    def add(self, other: "TokenUsage") -> None:
        snapshot = other.to_document()
        with self._lock:
            self.prompt_tokens += snapshot["prompt_tokens"]
            self.completion_tokens += snapshot["completion_tokens"]
            self.calls += snapshot["calls"]

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_document(self) -> Dict[str, int]:
        with self._lock:
            return {
                "prompt_tokens": self.prompt_tokens,
                "completion_tokens": self.completion_tokens,
                "calls": self.calls,
            }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenUsage):
            return NotImplemented
        return self.to_document() == other.to_document()

    def __repr__(self) -> str:
        return f"TokenUsage({self.to_document()})"


class Transport(Protocol):
    def send(self, config: EndpointConfig, request: ChatRequest) -> ChatResponse:
        ...


class FixtureTransport:
    """Replays canned responses in order and records every request it sees"""

    def __init__(self, responses: Sequence[ChatResponse]):
        self._lock = threading.Lock()
        self._queue = list(responses)
        self.requests: List[ChatRequest] = []

    @classmethod
    def from_documents(cls, documents: Sequence[Dict[str, Any]]) -> "FixtureTransport":
        try:
            return cls([ChatResponse.model_validate(doc) for doc in documents])
        except ValidationError as e:
            raise ConfigError(f"invalid fixture entry: {e.errors()[0]['msg']}")

    @classmethod
    def from_file(cls, path: str) -> "FixtureTransport":
        try:
            documents = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot load fixtures from {path}: {e}")
        if not isinstance(documents, list):
            raise ConfigError(f"fixture file {path} must hold a JSON array")
        return cls.from_documents(documents)

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._queue)

    def send(self, config: EndpointConfig, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
            if not self._queue:
                raise FixtureExhausted("fixture exhausted", payload=request.user)
            return self._queue.pop(0)


class HttpTransport:
    """Chat-completion JSON over HTTPS"""

    def __init__(self, api_key: str = "", session: Optional[requests.Session] = None):
        self.api_key = api_key
        self.session = session or requests.Session()

    def send(self, config: EndpointConfig, request: ChatRequest) -> ChatResponse:
        url = f"{config.base_url.rstrip('/')}/chat/completions"
        headers = {"Content-Type": "application/json; charset=utf-8"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": config.model_name,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

        try:
            response = self.session.post(url, json=payload, headers=headers, timeout=config.timeout)
        except requests.exceptions.Timeout as e:
            raise TransportError(f"request to {url} timed out", payload=str(e))
        except requests.exceptions.RequestException as e:
            raise TransportError(f"connection error talking to {url}", payload=str(e))

        if not 200 <= response.status_code < 300:
            raise HTTPStatusError(
                f"endpoint returned HTTP {response.status_code}",
                status_code=response.status_code,
                payload=response.text[:2000],
            )

        try:
            data = response.json()
            content = data["choices"][0]["message"]["content"]
            usage = data.get("usage") or {}
            return ChatResponse(
                content=content or "",
                prompt_tokens=int(usage.get("prompt_tokens") or 0),
                completion_tokens=int(usage.get("completion_tokens") or 0),
            )
        except (ValueError, KeyError, IndexError, TypeError, ValidationError) as e:
            raise MalformedResponseError(f"malformed response body: {e}", payload=response.text[:2000])


def _is_retryable(error: TransportError) -> bool:
    if isinstance(error, HTTPStatusError):
        return error.status_code == 429 or error.status_code >= 500
    return not isinstance(error, (FixtureExhausted, MalformedResponseError))


def complete(
    config: EndpointConfig,
    request: ChatRequest,
    transport: Transport,
    usage: Optional[TokenUsage] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatResponse:
    """Send one request, retrying transport failures with exponential backoff"""
    attempts = config.transport_retries + 1
    for attempt in range(attempts):
        try:
            response = transport.send(config, request)
        except TransportError as e:
            if not _is_retryable(e) or attempt == attempts - 1:
                raise
            delay = BACKOFF_BASE * 2**attempt
            logger.warning("transport_retry", attempt=attempt + 1, delay=delay, error=e.message)
            sleep(delay)
            continue
        if usage is not None:
            usage.record(response)
        return response
    raise TransportError("no attempts were made")


class LLMClient:
    """Endpoint + transport + run-wide token accounting, bounded in-flight requests"""

    def __init__(self, config: EndpointConfig, transport: Transport, usage: Optional[TokenUsage] = None):
        self.config = config
        self.transport = transport
        self.usage = usage if usage is not None else TokenUsage()
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    @property
    def max_in_flight(self) -> int:
        return self.config.max_in_flight

    def complete(self, request: ChatRequest, usage: Optional[TokenUsage] = None) -> ChatResponse:
        with self._slots:
            response = complete(self.config, request, self.transport, self.usage)
        if usage is not None:
            usage.record(response)
        logger.debug("llm_call", prompt_tokens=response.prompt_tokens, completion_tokens=response.completion_tokens)
        return response


def build_transport(config: EndpointConfig, fixtures: Optional[str] = None) -> Transport:
    if fixtures:
        return FixtureTransport.from_file(fixtures)
    return HttpTransport(api_key=get_api_key(config))
