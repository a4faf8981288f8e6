"""Offline re-representation of a context: the rethink/finish tool loop."""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

from . import prompts
from .backend import Backend, ChatRequest, Message, ToolCall, ToolSpec, Usage
from .backend.base import EFFORTS
from .errors import BackendError, MalformedResponse, MemoryStateError, MixedContexts
from .memory import (
    CONTEXT,
    HUMAN,
    PERSONA,
    RETHINK_BLOCK,
    AuditEntry,
    MemoryState,
    RethinkCall,
    apply_finish,
    apply_rethink,
    initial_state,
    render_memory,
)

log = logging.getLogger(__name__)

RETHINK_TOOL = "rethink_memory"
FINISH_TOOL = "finish_rethinking_memory"
FINISH_ALIASES = {FINISH_TOOL, "finish_rethinking"}

SLEEP_TOOLS = [
    ToolSpec(
        RETHINK_TOOL,
        "Re-evaluate the memory in block_name, integrating new and updated facts. "
        "Replace outdated information with the most likely truths, avoiding redundancy "
        "with original memories. Ensure consistency with other memory blocks.",
        {
            "type": "object",
            "properties": {
                "new_memory": {
                    "type": "string",
                    "description": "The new memory with information integrated from the memory block.",
                },
                "target_block_label": {"type": "string", "description": "The name of the block to write to."},
                "source_block_label": {
                    "type": ["string", "null"],
                    "description": "The name of the block to integrate information from.",
                },
            },
            "required": ["new_memory", "target_block_label"],
        },
    ),
    ToolSpec(
        FINISH_TOOL,
        "Call when done rethinking the memory.",
        {"type": "object", "properties": {}},
    ),
]


def context_hash(raw: str) -> str:
    """Lowercase hex SHA-256 of the UTF-8 bytes of ``raw``."""
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SleepConfig:
    max_rethink_calls: int = 10
    parallel_k: int = 1
    effort: Optional[str] = None
    prompt_id: str = "default"
    max_output_tokens: Optional[int] = None
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.max_rethink_calls < 1:
            raise ValueError("max_rethink_calls must be >= 1")
        if self.parallel_k < 1:
            raise ValueError("parallel_k must be >= 1")
        if self.effort is not None and self.effort not in EFFORTS:
            raise ValueError(f"effort must be one of {EFFORTS}")
        prompts.sleep_prompt(self.prompt_id)  # validates the id


# why a sleep run stopped
FINISHED = "finished"
CAPPED = "cap"
STALLED = "stall"
MALFORMED = "malformed"


@dataclass(frozen=True)
class DerivedContext:
    context_id: str
    value: str
    config: SleepConfig
    parallel_index: int = 0
    usage: Usage = Usage()
    calls: tuple[Usage, ...] = ()
    termination: str = FINISHED
    rethink_count: int = 0
    audit: tuple[AuditEntry, ...] = ()
    created_at: float = 0.0

    @property
    def stalled(self) -> bool:
        return self.termination == STALLED

    def provenance(self) -> dict:
        return {
            "context_id": self.context_id,
            "config": asdict(self.config),
            "parallel_index": self.parallel_index,
            "usage": self.usage.to_json(),
            "calls": [u.to_json() for u in self.calls],
            "termination": self.termination,
            "rethink_count": self.rethink_count,
            "created_at": self.created_at,
        }

    @classmethod
    def from_provenance(cls, value: str, meta: dict, audit: Sequence[AuditEntry] = ()) -> "DerivedContext":
        return cls(
            context_id=meta["context_id"],
            value=value,
            config=SleepConfig(**meta["config"]),
            parallel_index=int(meta.get("parallel_index", 0)),
            usage=Usage.from_json(meta["usage"]),
            calls=tuple(Usage.from_json(u) for u in meta.get("calls", [])),
            termination=meta.get("termination", FINISHED),
            rethink_count=int(meta.get("rethink_count", 0)),
            audit=tuple(audit),
            created_at=float(meta.get("created_at", 0.0)),
        )


@dataclass(frozen=True)
class SleepFailure:
    """Error slot for one failed run in a parallel batch."""

    parallel_index: int
    error: BaseException


def _parse_rethink(call: ToolCall, step: int) -> RethinkCall:
    args = call.arguments
    new_memory = args.get("new_memory")
    target = args.get("target_block_label", args.get("target"))
    source = args.get("source_block_label", args.get("source"))
    if not isinstance(new_memory, str):
        raise ValueError("new_memory must be a string")
    if target is not None and not isinstance(target, str):
        raise ValueError("target_block_label must be a string")
    if source is not None and not isinstance(source, str):
        raise ValueError("source_block_label must be a string or null")
    return RethinkCall(new_memory=new_memory, target_label=target, source_label=source, step_index=step)


@dataclass
class _Loop:
    context: str
    config: SleepConfig
    backend: Backend
    parallel_index: int
    context_id: str
    clock: Callable[[], float]
    state: MemoryState = field(init=False)
    history: list[Message] = field(default_factory=list)
    calls: list[Usage] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.state = initial_state(context=self.context)
        self.history = [Message("user", prompts.SLEEP_KICKOFF)]
        self.system = prompts.sleep_prompt(self.config.prompt_id)
        self.order = [PERSONA, HUMAN, CONTEXT, RETHINK_BLOCK]

    def request(self, turn: int) -> ChatRequest:
        memory = render_memory(self.state, self.order)
        return ChatRequest(
            messages=[Message("system", f"{self.system}\n\n{memory}")] + self.history,
            tools=SLEEP_TOOLS,
            effort=self.config.effort,
            max_output_tokens=self.config.max_output_tokens,
            temperature=self.config.temperature,
            metadata={
                "phase": "sleep",
                "context_id": self.context_id,
                "run_index": self.parallel_index,
                "turn": turn,
            },
        )

    def run(self) -> str:
        consecutive_text = 0
        malformed = 0
        step = 0
        turn = 0
        while True:
            try:
                response = self.backend.complete(self.request(turn))
            except MalformedResponse as exc:
                malformed += 1
                if malformed > 1:
                    return MALFORMED
                self.history.append(Message("system", prompts.MALFORMED_NOTE.format(error=exc)))
                turn += 1
                continue
            turn += 1
            self.calls.append(response.usage)
            output = response.outputs[0]

            if output.tool_call is None:
                consecutive_text += 1
                if consecutive_text >= 2:
                    return STALLED
                self.history.append(Message("assistant", output.text))
                self.history.append(Message("user", prompts.SLEEP_NUDGE))
                continue
            consecutive_text = 0
            call = output.tool_call

            if call.name in FINISH_ALIASES:
                self.state = apply_finish(self.state)
                return FINISHED

            error: Optional[str] = None
            if call.name == RETHINK_TOOL:
                try:
                    self.state = apply_rethink(self.state, _parse_rethink(call, step + 1), clock=self.clock)
                    step += 1
                except (ValueError, MemoryStateError) as exc:
                    error = f"{type(exc).__name__}: {exc}"
            else:
                error = f"unknown tool {call.name!r}"

            self.history.append(Message("assistant", "", tool_call=call))
            if error is not None:
                malformed += 1
                self.history.append(Message("tool", f"Error: {error}", tool_call_id=call.id))
                if malformed > 1:
                    return MALFORMED
                self.history.append(Message("system", prompts.MALFORMED_NOTE.format(error=error)))
                continue
            self.history.append(Message("tool", "None", tool_call_id=call.id))
            if self.state.rethink_count >= self.config.max_rethink_calls:
                return CAPPED


def run_sleep(
    context: str,
    config: SleepConfig,
    backend: Backend,
    parallel_index: int = 0,
    clock: Callable[[], float] = time.time,
) -> DerivedContext:
    """Derive c' from ``context`` by driving the rethink/finish tool loop.

    The loop stops at the first finish call, after ``max_rethink_calls``
    applied rethinks, after two consecutive plain-text replies (stall), or
    after a second malformed tool call. The returned value is the final
    ``rethink_memory_block`` in every case.
    """
    if not context:
        raise ValueError("context must be nonempty")
    loop = _Loop(context, config, backend, parallel_index, context_hash(context), clock)
    try:
        termination = loop.run()
    except BackendError:
        log.error("sleep run %d on %s failed", parallel_index, loop.context_id[:12])
        raise
    if termination != FINISHED:
        log.warning("sleep run %d on %s stopped: %s", parallel_index, loop.context_id[:12], termination)
    return DerivedContext(
        context_id=loop.context_id,
        value=loop.state.value(RETHINK_BLOCK),
        config=config,
        parallel_index=parallel_index,
        usage=Usage.total(loop.calls),
        calls=tuple(loop.calls),
        termination=termination,
        rethink_count=loop.state.rethink_count,
        audit=loop.state.audit,
        created_at=clock(),
    )


def run_sleep_parallel(
    context: str,
    config: SleepConfig,
    backend: Backend,
    max_workers: Optional[int] = None,
    clock: Callable[[], float] = time.time,
) -> list[Union[DerivedContext, SleepFailure]]:
    """Run ``config.parallel_k`` independent sleep runs; results in index order.

    A failed run leaves a :class:`SleepFailure` in its slot.
    """
    k = config.parallel_k

    def one(i: int) -> Union[DerivedContext, SleepFailure]:
        try:
            return run_sleep(context, config, backend, parallel_index=i, clock=clock)
        except Exception as exc:  # noqa: BLE001 - failures become slots
            return SleepFailure(i, exc)

    workers = max_workers if max_workers is not None else k
    if workers <= 1 or k == 1:
        return [one(i) for i in range(k)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(k)))


def _section(i: int, k: int, value: str) -> str:
    return f"=== derived context {i} of {k} ===\n{value}\n"


def concat_derived(parts: Sequence[DerivedContext]) -> str:
    """Join derived contexts in order, each under a numbered header."""
    if not parts:
        raise ValueError("concat_derived needs at least one part")
    ids = {p.context_id for p in parts}
    if len(ids) > 1:
        raise MixedContexts(f"parts span {len(ids)} contexts")
    k = len(parts)
    return "".join(_section(i, k, p.value) for i, p in enumerate(parts, 1))
