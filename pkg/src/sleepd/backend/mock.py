"""Deterministic scripted backend for tests and offline end-to-end runs."""

from __future__ import annotations

import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Union

from ..errors import BudgetRejected, MalformedResponse, ScriptExhausted, TransportError
from .base import (
    ChatRequest,
    ChatResponse,
    Output,
    RetryingBackend,
    RetryPolicy,
    ToolCall,
    Usage,
    count_tokens_proxy,
)

OUTPUT_KINDS = ("text", "tool_call", "transport_error", "malformed", "budget_rejected")


@dataclass(frozen=True)
class Scripted:
    kind: str
    payload: Any = None
    reasoning_tokens: int = 0

    def __post_init__(self) -> None:
        if self.kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown scripted output kind {self.kind!r}")

    @classmethod
    def text(cls, text: str, reasoning_tokens: int = 0) -> "Scripted":
        return cls("text", text, reasoning_tokens)

    @classmethod
    def tool(cls, name: str, reasoning_tokens: int = 0, **arguments: Any) -> "Scripted":
        return cls("tool_call", {"name": name, "arguments": arguments}, reasoning_tokens)


def rethink(new_memory: str, target: str = "rethink_memory_block", source: Optional[str] = None) -> Scripted:
    args = {"new_memory": new_memory, "target_block_label": target}
    if source is not None:
        args["source_block_label"] = source
    return Scripted("tool_call", {"name": "rethink_memory", "arguments": args})


def finish() -> Scripted:
    return Scripted("tool_call", {"name": "finish_rethinking_memory", "arguments": {}})


def send_message(message: str, reasoning_tokens: int = 0) -> Scripted:
    return Scripted("tool_call", {"name": "send_message", "arguments": {"message": message}}, reasoning_tokens)


@dataclass(frozen=True)
class Substring:
    needle: str

    def __call__(self, request: ChatRequest) -> bool:
        return self.needle in request.text()


@dataclass(frozen=True)
class MetaMatch:
    """Matches requests whose metadata contains every given key/value."""

    items: tuple[tuple[str, Any], ...]

    def __call__(self, request: ChatRequest) -> bool:
        return all(request.metadata.get(k) == v for k, v in self.items)


def meta(**kwargs: Any) -> MetaMatch:
    return MetaMatch(tuple(sorted(kwargs.items())))


def always(_: ChatRequest) -> bool:
    return True


Matcher = Union[str, Callable[[ChatRequest], bool]]


@dataclass
class _Route:
    matcher: Callable[[ChatRequest], bool]
    queue: deque = field(default_factory=deque)
    repeat: bool = False
    last: Optional[Scripted] = None


@dataclass(frozen=True)
class RecordedRequest:
    request: ChatRequest
    attempt: int

    @property
    def retried(self) -> bool:
        return self.attempt > 0


def _usage_for(item: Scripted) -> int:
    if item.kind == "text":
        return count_tokens_proxy(str(item.payload))
    if item.kind == "tool_call":
        return count_tokens_proxy(json.dumps(item.payload.get("arguments", {}), sort_keys=True, ensure_ascii=False))
    return 0


class MockBackend(RetryingBackend):
    """Routes each request to the first registered matcher that accepts it.

    Each route serves its scripted outputs FIFO. A request that matches a
    drained route raises :class:`ScriptExhausted`; one that matches no
    route raises it too. Routes registered with ``repeat=True`` keep
    replaying their final output instead of draining.
    """

    def __init__(self, retry: Optional[RetryPolicy] = None):
        super().__init__(retry or RetryPolicy(max_retries=3, base_delay=0.0), sleep=lambda _: None)
        self._routes: list[_Route] = []
        self._log: list[RecordedRequest] = []
        self._lock = threading.Lock()
        self._call_ids = 0

    def script(self, matcher: Matcher, outputs: Iterable[Scripted], repeat: bool = False) -> None:
        if isinstance(matcher, str):
            matcher = Substring(matcher)
        with self._lock:
            for route in self._routes:
                if route.matcher == matcher:
                    route.queue.extend(outputs)
                    route.repeat = route.repeat or repeat
                    return
            self._routes.append(_Route(matcher, deque(outputs), repeat))

    @property
    def requests(self) -> list[ChatRequest]:
        """First attempts only: one entry per ``complete()`` call."""
        with self._lock:
            return [r.request for r in self._log if r.attempt == 0]

    @property
    def attempts(self) -> list[RecordedRequest]:
        with self._lock:
            return list(self._log)

    def _pop(self, route: _Route) -> Scripted:
        if route.queue:
            item = route.queue.popleft()
            route.last = item
            return item
        if route.repeat and route.last is not None:
            return route.last
        raise ScriptExhausted("scripted outputs exhausted for matching route")

    def _complete_once(self, request: ChatRequest, attempt: int) -> ChatResponse:
        with self._lock:
            self._log.append(RecordedRequest(request, attempt))
            route = next((r for r in self._routes if r.matcher(request)), None)
            if route is None:
                raise ScriptExhausted("no scripted route matches request")
            items = [self._pop(route) for _ in range(request.sample_count)]
            outputs: list[Output] = []
            completion = reasoning = 0
            for item in items:
                if item.kind == "transport_error":
                    raise TransportError(str(item.payload or "scripted transport error"))
                if item.kind == "malformed":
                    raise MalformedResponse(str(item.payload or "scripted malformed response"))
                if item.kind == "budget_rejected":
                    raise BudgetRejected(str(item.payload or "scripted budget rejection"))
                if item.kind == "text":
                    outputs.append(Output(text=str(item.payload)))
                else:
                    self._call_ids += 1
                    outputs.append(
                        Output(
                            tool_call=ToolCall(
                                name=item.payload["name"],
                                arguments=dict(item.payload.get("arguments", {})),
                                id=f"call_{self._call_ids}",
                            )
                        )
                    )
                completion += _usage_for(item)
                reasoning += item.reasoning_tokens
            usage = Usage(count_tokens_proxy(request.text()), completion, reasoning)
            return ChatResponse(outputs, usage)


def script(mock: MockBackend, matcher: Matcher, outputs: Iterable[Scripted]) -> None:
    mock.script(matcher, outputs)


def load_script(path: str | Path, mock: Optional[MockBackend] = None) -> MockBackend:
    """Load a line-delimited script file.

    Each record: ``{"matcher_substring", "output_kind", "payload"}`` with
    optional ``"reasoning_tokens"`` and ``"repeat"``. An empty matcher
    substring matches every request.
    """
    mock = mock or MockBackend()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                needle = rec["matcher_substring"]
                kind = rec["output_kind"]
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from None
            payload = rec.get("payload")
            if kind == "tool_call" and not (isinstance(payload, dict) and "name" in payload):
                raise ValueError(f"{path}:{lineno}: tool_call payload needs a 'name'")
            item = Scripted(kind, payload, int(rec.get("reasoning_tokens", 0)))
            mock.script(Substring(needle), [item], repeat=bool(rec.get("repeat", False)))
    return mock
