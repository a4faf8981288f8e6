"""Budgeted test-time answering against raw or derived contexts."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any, Optional

from . import prompts
from .backend import Backend, ChatRequest, Message, ToolSpec, Usage
from .backend.base import EFFORTS
from .errors import BackendError, NoAnswer
from .memory import HUMAN, PERSONA, RETHINK_BLOCK, initial_state, render_memory

SEND_MESSAGE = "send_message"
ANSWER_TOOLS = [
    ToolSpec(
        SEND_MESSAGE,
        "Sends a message to the human user.",
        {
            "type": "object",
            "properties": {"message": {"type": "string", "description": "Message contents."}},
            "required": ["message"],
        },
    )
]

CONTEXT_KINDS = ("raw", "derived", "concat_derived", "context_only")
DEFAULT_STEP_CAP = 5


@dataclass(frozen=True)
class Budget:
    verbosity_level: int = 0
    effort: Optional[str] = None
    max_output_tokens: Optional[int] = None
    sample_k: int = 1

    def __post_init__(self) -> None:
        if self.verbosity_level not in range(5):
            raise ValueError(f"verbosity_level must be in 0..4, got {self.verbosity_level}")
        if self.sample_k < 1:
            raise ValueError("sample_k must be >= 1")
        if self.effort is not None and self.effort not in EFFORTS:
            raise ValueError(f"effort must be one of {EFFORTS}")
        if self.max_output_tokens is not None and self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def to_json(self) -> dict[str, Any]:
        return {
            "verbosity_level": self.verbosity_level,
            "effort": self.effort,
            "max_output_tokens": self.max_output_tokens,
            "sample_k": self.sample_k,
        }


@dataclass(frozen=True)
class Answer:
    raw_text: str
    numeric: Optional[Fraction]
    usage: Usage
    context_kind: str
    failed: bool = False
    error: Optional[str] = None


@dataclass(frozen=True)
class PassAtKResult:
    correct: bool
    samples: list[Answer]
    usage: Usage


_MARKER = re.compile(r"the answer is", re.IGNORECASE)
_NUMBER = re.compile(r"(?<![\w.])([-+]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|[-+]?\.\d+)(?![\d])")


def _to_fraction(token: str) -> Fraction:
    return Fraction(token.replace(",", ""))


def extract_numeric(text: str) -> Optional[Fraction]:
    """Number after the last "The answer is", else the last standalone number."""
    markers = list(_MARKER.finditer(text))
    if markers:
        m = _NUMBER.search(text, markers[-1].end())
        if m is not None:
            return _to_fraction(m.group(1))
    found = _NUMBER.findall(text)
    if not found:
        return None
    return _to_fraction(found[-1])


def grade(numeric: Optional[Fraction], truth: Any, aime_format: bool = False) -> bool:
    """Exact rational equality; AIME mode also requires an integer in 0..999."""
    if numeric is None:
        return False
    try:
        expected = truth if isinstance(truth, Fraction) else Fraction(str(truth).replace(",", "").strip())
    except (ValueError, ZeroDivisionError):
        return False
    if aime_format:
        if numeric.denominator != 1 or not 0 <= numeric <= 999:
            return False
    return numeric == expected


def _system_prompt(budget: Budget, memory_value: str) -> str:
    state = initial_state(rethink_value=memory_value)
    memory = render_memory(state, [PERSONA, HUMAN, RETHINK_BLOCK])
    return f"{prompts.verbosity_prompt(budget.verbosity_level)}\n\n{memory}"


def _converse(
    system: str,
    user: str,
    budget: Budget,
    backend: Backend,
    context_kind: str,
    step_cap: int,
    temperature: float,
    metadata: dict[str, Any],
) -> Answer:
    history = [Message("user", user)]
    calls: list[Usage] = []
    for turn in range(step_cap):
        request = ChatRequest(
            messages=[Message("system", system)] + history,
            tools=ANSWER_TOOLS,
            effort=budget.effort,
            max_output_tokens=budget.max_output_tokens,
            temperature=temperature,
            metadata={**metadata, "phase": "test", "turn": turn},
        )
        response = backend.complete(request)
        calls.append(response.usage)
        output = response.outputs[0]
        call = output.tool_call
        if call is not None and call.name == SEND_MESSAGE and isinstance(call.arguments.get("message"), str):
            text = call.arguments["message"]
            return Answer(text, extract_numeric(text), Usage.total(calls), context_kind)
        if call is None:
            history.append(Message("assistant", output.text))
            history.append(Message("user", prompts.ANSWER_NUDGE))
        else:
            history.append(Message("assistant", "", tool_call=call))
            history.append(
                Message("tool", f"Error: only {SEND_MESSAGE}(message) is available.", tool_call_id=call.id)
            )
    raise NoAnswer(f"no {SEND_MESSAGE} call within {step_cap} turns", usage=Usage.total(calls))


def answer(
    query: str,
    context_text: str,
    budget: Budget,
    backend: Backend,
    context_kind: str = "derived",
    step_cap: int = DEFAULT_STEP_CAP,
    temperature: float = 0.0,
    metadata: Optional[dict[str, Any]] = None,
) -> Answer:
    """Answer ``query`` with ``context_text`` as the only context.

    For derived kinds the text goes into the ``rethink_memory_block`` and
    the user turn carries the query alone. For ``raw`` the memory block is
    empty and the context precedes the query in the user turn.
    """
    if not query:
        raise ValueError("query must be nonempty")
    if context_kind not in ("raw", "derived", "concat_derived"):
        raise ValueError(f"answer() does not handle context_kind {context_kind!r}")
    if context_kind == "raw":
        system = _system_prompt(budget, "")
        user = f"{context_text}\n\n{query}" if context_text else query
    else:
        system = _system_prompt(budget, context_text)
        user = query
    return _converse(system, user, budget, backend, context_kind, step_cap, temperature, metadata or {})


def context_only_answer(
    context_text: str,
    budget: Budget,
    backend: Backend,
    step_cap: int = DEFAULT_STEP_CAP,
    temperature: float = 0.0,
    metadata: Optional[dict[str, Any]] = None,
) -> Answer:
    """Have the model guess the likeliest question about the context and answer it."""
    system = f"{prompts.verbosity_prompt(budget.verbosity_level)}\n\n{prompts.CONTEXT_ONLY_INSTRUCTION}"
    return _converse(
        system, context_text, budget, backend, "context_only", step_cap, temperature, metadata or {}
    )


def pass_at_k_evaluate(
    query: str,
    context_text: str,
    budget: Budget,
    truth: Any,
    backend: Backend,
    context_kind: str = "raw",
    temperature: float = 0.7,
    aime_format: bool = False,
    max_workers: Optional[int] = None,
    metadata: Optional[dict[str, Any]] = None,
) -> PassAtKResult:
    """Oracle pass@k at the lowest verbosity level.

    Samples run independently; a failed sample counts as incorrect and is
    flagged rather than raised.
    """
    k = budget.sample_k
    base = replace(budget, verbosity_level=0, sample_k=1)

    def sample(i: int) -> Answer:
        try:
            return answer(
                query,
                context_text,
                base,
                backend,
                context_kind=context_kind,
                temperature=temperature,
                metadata={**(metadata or {}), "sample_index": i},
            )
        except (BackendError, NoAnswer) as exc:
            usage = getattr(exc, "usage", None) or Usage()
            return Answer("", None, usage, context_kind, failed=True, error=f"{type(exc).__name__}: {exc}")

    workers = max_workers if max_workers is not None else k
    if workers <= 1 or k == 1:
        samples = [sample(i) for i in range(k)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(sample, range(k)))
    correct = any(grade(s.numeric, truth, aime_format) for s in samples)
    return PassAtKResult(correct, samples, Usage.total([s.usage for s in samples]))
