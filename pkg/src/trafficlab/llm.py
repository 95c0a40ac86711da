"""Chat backends: a chat-completions HTTP client and a transcript replayer."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import httpx

from trafficlab.errors import TrafficlabError

API_KEY_ENV = "TMLAB_API_KEY"
ROLES = ("system", "user", "assistant")


class BackendError(TrafficlabError):
    """Base class for chat backend failures."""


class TransportError(BackendError):
    """Connection-level failure (retryable)."""


class HttpStatusError(BackendError):
    def __init__(self, status: int, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}: {body[:200]}")

    @property
    def retryable(self) -> bool:
        return self.status == 429 or 500 <= self.status < 600


class ProtocolError(BackendError):
    """The response body does not have the expected shape."""


class ReplayExhaustedError(BackendError):
    """The replay transcript has no entries left."""


class RetriesExhaustedError(BackendError):
    def __init__(self, attempts: int, last: BaseException):
        self.attempts = attempts
        self.last = last
        super().__init__(f"giving up after {attempts} attempts: {last}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple  # ((role, content), ...)
    temperature: float = 0.7
    max_tokens: int = 2048

    def __post_init__(self):
        msgs = tuple((str(r), str(c)) for r, c in self.messages)
        if not msgs:
            raise ValueError("a chat request needs at least one message")
        bad = [r for r, _ in msgs if r not in ROLES]
        if bad:
            raise ValueError(f"invalid message role(s): {', '.join(bad)}")
        object.__setattr__(self, "messages", msgs)

    def body(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class ChatResponse:
    content: str
    usage: dict = field(default_factory=dict)
    latency_s: float = 0.0


class ReplayBackend:
    """Return canned responses in order, ignoring the request."""

    def __init__(self, responses):
        self.responses = [str(r) for r in responses]
        self.cursor = 0

    @classmethod
    def from_jsonl(cls, path) -> "ReplayBackend":
        responses = []
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                responses.append(obj["response"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ProtocolError(f"{path}: line {lineno}: expected {{\"response\": ...}} ({exc})") from None
        return cls(responses)

    @property
    def remaining(self) -> int:
        return len(self.responses) - self.cursor

    def chat(self, request: ChatRequest) -> ChatResponse:
        if self.cursor >= len(self.responses):
            raise ReplayExhaustedError(f"replay transcript exhausted after {len(self.responses)} responses")
        content = self.responses[self.cursor]
        self.cursor += 1
        return ChatResponse(content)


class HttpChatBackend:
    """POST chat-completions requests to ``endpoint``.

    The bearer token is read from ``TMLAB_API_KEY`` unless given. ``transport``
    lets tests plug in ``httpx.MockTransport``.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 120.0, transport=None):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def chat(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        start = time.monotonic()
        try:
            resp = self._client.post(self.endpoint, json=request.body(), headers=headers)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        latency = time.monotonic() - start
        if resp.status_code >= 400:
            raise HttpStatusError(resp.status_code, resp.text)
        try:
            doc = resp.json()
            content = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat-completions response: {exc!r}") from None
        if not isinstance(content, str):
            raise ProtocolError("response message content is not text")
        usage = doc.get("usage") or {}
        return ChatResponse(content, {k: v for k, v in usage.items() if isinstance(v, int)}, latency)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay_s: float = 1.0
    factor: float = 2.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")

    def delay(self, attempt: int) -> float:
        """Sleep before retry number ``attempt`` (1-based)."""
        return self.base_delay_s * self.factor ** (attempt - 1)


def _retryable(exc: BaseException) -> bool:
    if isinstance(exc, TransportError):
        return True
    return isinstance(exc, HttpStatusError) and exc.retryable


def with_retry(backend, request: ChatRequest, policy: RetryPolicy = RetryPolicy(),
               sleep: Callable[[float], None] = time.sleep) -> ChatResponse:
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return backend.chat(request)
        except BackendError as exc:
            if not _retryable(exc):
                raise
            if attempt == policy.max_attempts:
                raise RetriesExhaustedError(attempt, exc) from exc
            sleep(policy.delay(attempt))
    raise AssertionError("unreachable")  # pragma: no cover


def make_backend(spec: str, endpoint: str | None = None, transport=None):
    """Build a backend from a ``live`` or ``replay:<path>`` selector."""
    if spec.startswith("replay:"):
        return ReplayBackend.from_jsonl(spec[len("replay:"):])
    if spec == "live":
        if not endpoint:
            raise ValueError("live backend needs backend.endpoint in the config")
        return HttpChatBackend(endpoint, transport=transport)
    raise ValueError(f"backend must be 'live' or 'replay:<path>', got {spec!r}")
