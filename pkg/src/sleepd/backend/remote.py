"""OpenAI-compatible chat-completions client over HTTPS."""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Optional

import httpx

from ..errors import BackendFailure, BudgetRejected, MalformedResponse, TransportError
from .base import (
    ChatRequest,
    ChatResponse,
    Message,
    Output,
    RetryingBackend,
    RetryPolicy,
    ToolCall,
    Usage,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "SLEEPD_API_KEY"
API_BASE_ENV = "SLEEPD_API_BASE"
DEFAULT_BASE_URL = "https://api.openai.com/v1"

_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


def _message_json(m: Message) -> dict[str, Any]:
    if m.tool_call is not None:
        return {
            "role": "assistant",
            "content": m.content or None,
            "tool_calls": [
                {
                    "id": m.tool_call.id,
                    "type": "function",
                    "function": {
                        "name": m.tool_call.name,
                        "arguments": json.dumps(m.tool_call.arguments, ensure_ascii=False),
                    },
                }
            ],
        }
    out: dict[str, Any] = {"role": m.role, "content": m.content}
    if m.tool_call_id is not None:
        out["tool_call_id"] = m.tool_call_id
    return out


class RemoteBackend(RetryingBackend):
    """Chat-completions client with bounded exponential backoff.

    ``sample_count > 1`` is realized as independent parallel calls. When
    ``extension_prompt`` is set and a completion stops on the token cap,
    the partial text is fed back with the extension prompt appended, up
    to ``max_extensions`` times (budget forcing).
    """

    def __init__(
        self,
        model: str,
        base_url: Optional[str] = None,
        api_key: Optional[str] = None,
        timeout: float = 120.0,
        retry: Optional[RetryPolicy] = None,
        extension_prompt: str = "",
        max_extensions: int = 1,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(retry, sleep)
        self.model = model
        self.base_url = (base_url or os.getenv(API_BASE_ENV) or DEFAULT_BASE_URL).rstrip("/")
        self.api_key = api_key if api_key is not None else os.getenv(API_KEY_ENV, "")
        self.extension_prompt = extension_prompt
        self.max_extensions = max_extensions
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(base_url=self.base_url, headers=headers, timeout=timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def _body(self, request: ChatRequest, messages: list[dict[str, Any]]) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
        }
        if request.tools:
            body["tools"] = [
                {
                    "type": "function",
                    "function": {"name": t.name, "description": t.description, "parameters": t.parameters},
                }
                for t in request.tools
            ]
            body["parallel_tool_calls"] = False
        if request.max_output_tokens is not None:
            body["max_completion_tokens"] = request.max_output_tokens
        if request.effort is not None:
            body["reasoning_effort"] = request.effort
        return body

    def _post(self, body: dict[str, Any]) -> dict[str, Any]:
        try:
            resp = self._client.post("/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in _RETRYABLE_STATUS:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            text = resp.text[:500]
            if resp.status_code == 400 and ("max_tokens" in text or "max_completion_tokens" in text):
                raise BudgetRejected(text)
            raise BackendFailure(f"HTTP {resp.status_code}: {text}")
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"non-JSON response body: {resp.text[:200]}") from exc

    @staticmethod
    def _parse(data: dict[str, Any]) -> tuple[Output, Usage, str]:
        try:
            choice = data["choices"][0]
            msg = choice["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"response lacks choices[0].message: {data!r:.200}") from exc
        raw_usage = data.get("usage") or {}
        details = raw_usage.get("completion_tokens_details") or {}
        reasoning = int(details.get("reasoning_tokens") or 0)
        completion = int(raw_usage.get("completion_tokens") or 0)
        # providers report reasoning inside completion_tokens; keep the two disjoint
        usage = Usage(int(raw_usage.get("prompt_tokens") or 0), max(completion - reasoning, 0), reasoning)
        finish = choice.get("finish_reason") or ""
        calls = msg.get("tool_calls") or []
        if calls:
            if len(calls) > 1:
                log.warning("provider returned %d tool calls; using the first", len(calls))
            fn = calls[0].get("function") or {}
            try:
                args = json.loads(fn.get("arguments") or "{}")
            except json.JSONDecodeError as exc:
                raise MalformedResponse(f"tool call arguments are not JSON: {fn.get('arguments')!r:.200}") from exc
            if not isinstance(args, dict) or not fn.get("name"):
                raise MalformedResponse("tool call missing name or object arguments")
            return Output(tool_call=ToolCall(fn["name"], args, calls[0].get("id", ""))), usage, finish
        return Output(text=msg.get("content") or ""), usage, finish

    def _one_sample(self, request: ChatRequest) -> tuple[Output, Usage]:
        messages = [_message_json(m) for m in request.messages]
        output, usage, finish = self._parse(self._post(self._body(request, messages)))
        text = output.text
        extensions = 0
        while (
            self.extension_prompt
            and finish == "length"
            and not output.is_tool_call
            and extensions < self.max_extensions
        ):
            extensions += 1
            messages = messages + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": self.extension_prompt},
            ]
            output, more, finish = self._parse(self._post(self._body(request, messages)))
            usage = usage + more
            if not output.is_tool_call:
                text = text + output.text
        if not output.is_tool_call:
            output = Output(text=text)
        return output, usage

    def _complete_once(self, request: ChatRequest, attempt: int) -> ChatResponse:
        if request.sample_count == 1:
            output, usage = self._one_sample(request)
            return ChatResponse([output], usage)
        with ThreadPoolExecutor(max_workers=request.sample_count) as pool:
            results = list(pool.map(lambda _: self._one_sample(request), range(request.sample_count)))
        return ChatResponse([o for o, _ in results], Usage.total([u for _, u in results]))
