from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Optional, Protocol, Sequence

from ..errors import BackendFailure, TransportError

log = logging.getLogger(__name__)

Effort = Literal["low", "medium", "high"]
EFFORTS = ("low", "medium", "high")


def count_tokens_proxy(text: str) -> int:
    """Number of maximal whitespace-delimited chunks in ``text``."""
    return len(text.split())


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    reasoning_tokens: int = 0

    def __post_init__(self) -> None:
        if min(self.prompt_tokens, self.completion_tokens, self.reasoning_tokens) < 0:
            raise ValueError(f"usage counts must be non-negative: {self}")

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.reasoning_tokens + other.reasoning_tokens,
        )

    @property
    def generated_tokens(self) -> int:
        return self.completion_tokens + self.reasoning_tokens

    @classmethod
    def total(cls, usages: Sequence["Usage"]) -> "Usage":
        out = cls()
        for u in usages:
            out = out + u
        return out

    def to_json(self) -> dict:
        return {
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "reasoning_tokens": self.reasoning_tokens,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Usage":
        return cls(
            int(data.get("prompt_tokens", 0)),
            int(data.get("completion_tokens", 0)),
            int(data.get("reasoning_tokens", 0)),
        )


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict[str, Any]
    id: str = ""


@dataclass(frozen=True)
class Message:
    role: str
    content: str = ""
    tool_call: Optional[ToolCall] = None
    tool_call_id: Optional[str] = None


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict[str, Any]


@dataclass(frozen=True)
class Output:
    """One sampled completion: assistant text, or a single tool call."""

    text: str = ""
    tool_call: Optional[ToolCall] = None

    @property
    def is_tool_call(self) -> bool:
        return self.tool_call is not None


@dataclass
class ChatRequest:
    messages: list[Message]
    tools: list[ToolSpec] = field(default_factory=list)
    effort: Optional[Effort] = None
    max_output_tokens: Optional[int] = None
    temperature: float = 0.0
    sample_count: int = 1
    # routing hints for the mock and for logging; never sent to a provider
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("ChatRequest.messages must be nonempty")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.max_output_tokens is not None and self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")
        if self.effort is not None and self.effort not in EFFORTS:
            raise ValueError(f"effort must be one of {EFFORTS}")

    def text(self) -> str:
        """All message contents joined; what substring matchers search."""
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    outputs: list[Output]
    usage: Usage


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0
    jitter: float = 0.0

    def delay(self, attempt: int) -> float:
        d = min(self.max_delay, self.base_delay * (2**attempt))
        if self.jitter:
            d += random.uniform(0, self.jitter)
        return d


class RetryingBackend:
    """Shared retry loop. Subclasses implement ``_complete_once``.

    Only :class:`TransportError` is retried; every other error surfaces
    on the first attempt.
    """

    def __init__(self, retry: Optional[RetryPolicy] = None, sleep: Callable[[float], None] = time.sleep):
        self.retry = retry or RetryPolicy()
        self._sleep = sleep

    def _complete_once(self, request: ChatRequest, attempt: int) -> ChatResponse:
        raise NotImplementedError

    def complete(self, request: ChatRequest) -> ChatResponse:
        last: Optional[TransportError] = None
        for attempt in range(self.retry.max_retries + 1):
            try:
                return self._complete_once(request, attempt)
            except TransportError as exc:
                last = exc
                if attempt == self.retry.max_retries:
                    break
                delay = self.retry.delay(attempt)
                log.warning("transport error (attempt %d): %s; retrying in %.2fs", attempt + 1, exc, delay)
                self._sleep(delay)
        raise BackendFailure(f"retries exhausted after {self.retry.max_retries + 1} attempts: {last}") from last
