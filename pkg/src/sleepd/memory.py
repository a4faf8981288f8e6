"""Labeled memory blocks and the rethink/finish state machine.

A :class:`MemoryState` is what the sleep loop mutates. Operations are
functional: ``apply_rethink`` and ``apply_finish`` return a new state and
leave their input untouched, which keeps parallel sleep runs isolated for
free.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional

from .errors import (
    EmptyTarget,
    FinishedState,
    LimitExceeded,
    ReadOnlyViolation,
    StepOrderError,
    UnknownLabel,
)

PERSONA = "persona"
HUMAN = "human"
CONTEXT = "context"
RETHINK_BLOCK = "rethink_memory_block"


@dataclass(frozen=True)
class MemoryBlock:
    label: str
    value: str = ""
    read_only: bool = False
    char_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.label:
            raise EmptyTarget("memory block label must be nonempty")
        if self.char_limit is not None:
            if self.char_limit <= 0:
                raise ValueError("char_limit must be positive")
            if len(self.value) > self.char_limit:
                raise LimitExceeded(
                    f"block {self.label!r}: {len(self.value)} chars > limit {self.char_limit}"
                )


@dataclass(frozen=True)
class RethinkCall:
    new_memory: str
    target_label: Optional[str]
    source_label: Optional[str] = None
    step_index: int = 1


@dataclass(frozen=True)
class AuditEntry:
    step_index: int
    target: str
    source: Optional[str]
    value: str
    timestamp: float

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "target": self.target,
            "source": self.source,
            "value": self.value,
            "timestamp": self.timestamp,
        }


@dataclass(frozen=True)
class MemoryState:
    blocks: Mapping[str, MemoryBlock] = field(default_factory=dict)
    rethink_count: int = 0
    finished: bool = False
    audit: tuple[AuditEntry, ...] = ()

    @classmethod
    def from_blocks(cls, blocks: Iterable[MemoryBlock]) -> "MemoryState":
        mapping: dict[str, MemoryBlock] = {}
        for block in blocks:
            if block.label in mapping:
                raise ValueError(f"duplicate block label {block.label!r}")
            mapping[block.label] = block
        return cls(blocks=mapping)

    def value(self, label: str) -> str:
        try:
            return self.blocks[label].value
        except KeyError:
            raise UnknownLabel(label) from None

    def get(self, label: str) -> Optional[MemoryBlock]:
        return self.blocks.get(label)


def initial_state(
    context: str = "",
    persona: str = "",
    human: str = "",
    rethink_value: str = "",
) -> MemoryState:
    """Block layout used by both phases.

    ``persona``, ``human`` and the raw ``context`` are read-only; only
    ``rethink_memory_block`` is writable. The context block is omitted
    when ``context`` is empty.
    """
    blocks = [
        MemoryBlock(PERSONA, persona, read_only=True),
        MemoryBlock(HUMAN, human, read_only=True),
    ]
    if context:
        blocks.append(MemoryBlock(CONTEXT, context, read_only=True))
    blocks.append(MemoryBlock(RETHINK_BLOCK, rethink_value))
    return MemoryState.from_blocks(blocks)


def apply_rethink(
    state: MemoryState,
    call: RethinkCall,
    clock: Callable[[], float] = time.time,
) -> MemoryState:
    """Replace (or create) the target block's value with ``call.new_memory``.

    The source label is recorded in the audit trail but never read.
    """
    if state.finished:
        raise FinishedState("memory state is finished; no further rethinks accepted")
    if not call.target_label:
        raise EmptyTarget("rethink call has no target block label")
    if state.audit and call.step_index <= state.audit[-1].step_index:
        raise StepOrderError(
            f"step_index {call.step_index} does not follow {state.audit[-1].step_index}"
        )
    existing = state.blocks.get(call.target_label)
    if existing is None:
        updated = MemoryBlock(call.target_label, call.new_memory)
    else:
        if existing.read_only:
            raise ReadOnlyViolation(f"block {call.target_label!r} is read-only")
        if existing.char_limit is not None and len(call.new_memory) > existing.char_limit:
            raise LimitExceeded(
                f"block {call.target_label!r}: {len(call.new_memory)} chars > "
                f"limit {existing.char_limit}"
            )
        updated = replace(existing, value=call.new_memory)

    blocks = dict(state.blocks)
    blocks[call.target_label] = updated
    entry = AuditEntry(
        step_index=call.step_index,
        target=call.target_label,
        source=call.source_label,
        value=call.new_memory,
        timestamp=clock(),
    )
    return replace(
        state,
        blocks=blocks,
        rethink_count=state.rethink_count + 1,
        audit=state.audit + (entry,),
    )


def apply_finish(state: MemoryState) -> MemoryState:
    if state.finished:
        raise FinishedState("memory state already finished")
    return replace(state, finished=True)


def render_memory(state: MemoryState, order: Iterable[str]) -> str:
    """Render blocks as ``<label>\\nvalue\\n</label>`` sections, in ``order``."""
    sections = []
    for label in order:
        block = state.blocks.get(label)
        if block is None:
            raise UnknownLabel(label)
        sections.append(f"<{label}>\n{block.value}\n</{label}>")
    return "\n".join(sections)


def write_audit(path: str | Path, entries: Iterable[AuditEntry]) -> None:
    """Write one JSON record per rethink call."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")


def read_audit(path: str | Path) -> list[AuditEntry]:
    with Path(path).open(encoding="utf-8") as fh:
        return [AuditEntry(**json.loads(line)) for line in fh if line.strip()]
