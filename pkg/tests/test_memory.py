import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepd.errors import EmptyTarget, FinishedState, LimitExceeded, ReadOnlyViolation, StepOrderError, UnknownLabel
from sleepd.memory import (
    HUMAN,
    PERSONA,
    RETHINK_BLOCK,
    MemoryBlock,
    MemoryState,
    RethinkCall,
    apply_finish,
    apply_rethink,
    initial_state,
    read_audit,
    render_memory,
    write_audit,
)


def call(value, target=RETHINK_BLOCK, step=1, source=None):
    return RethinkCall(new_memory=value, target_label=target, source_label=source, step_index=step)


def test_direct_substitution():
    s = apply_rethink(initial_state(), call("X"))
    assert s.value(RETHINK_BLOCK) == "X"
    assert s.rethink_count == 1


def test_absent_target_is_created():
    s = apply_rethink(initial_state(), call("notes", target="scratch"))
    assert s.value("scratch") == "notes"
    assert not s.get("scratch").read_only


def test_last_write_wins():
    s = initial_state()
    for i, v in enumerate(["v1", "v2", "v3"], 1):
        s = apply_rethink(s, call(v, step=i))
    assert s.value(RETHINK_BLOCK) == "v3"
    assert s.rethink_count == 3
    assert [e.value for e in s.audit] == ["v1", "v2", "v3"]


def test_source_label_recorded_not_validated():
    s = apply_rethink(initial_state(), call("X", source="does-not-exist"))
    assert s.audit[0].source == "does-not-exist"


def test_empty_new_memory_erases():
    s = apply_rethink(initial_state(rethink_value="old"), call(""))
    assert s.value(RETHINK_BLOCK) == ""


def test_errors():
    s = initial_state(context="c", persona="p")
    with pytest.raises(ReadOnlyViolation):
        apply_rethink(s, call("x", target=PERSONA))
    with pytest.raises(ReadOnlyViolation):
        apply_rethink(s, call("x", target="context"))
    with pytest.raises(EmptyTarget):
        apply_rethink(s, call("x", target=""))
    limited = MemoryState.from_blocks([MemoryBlock("b", "", char_limit=3)])
    with pytest.raises(LimitExceeded):
        apply_rethink(limited, call("abcd", target="b"))
    assert apply_rethink(limited, call("abc", target="b")).value("b") == "abc"
    with pytest.raises(FinishedState):
        apply_rethink(apply_finish(s), call("x"))


def test_step_index_must_increase():
    s = apply_rethink(initial_state(), call("a", step=2))
    with pytest.raises(StepOrderError):
        apply_rethink(s, call("b", step=2))


def test_finish():
    s = apply_finish(initial_state())
    assert s.finished and s.rethink_count == 0
    s = initial_state()
    for i in range(1, 4):
        s = apply_rethink(s, call(f"v{i}", step=i))
    f = apply_finish(s)
    assert f.finished and f.rethink_count == 3 and f.value(RETHINK_BLOCK) == "v3"
    with pytest.raises(FinishedState):
        apply_finish(f)


def test_render():
    s = initial_state(persona="P")
    assert render_memory(s, []) == ""
    out = render_memory(s, [PERSONA])
    assert out.count("<persona>") == 1 and "P" in out
    assert render_memory(s, [PERSONA, HUMAN, RETHINK_BLOCK]) == render_memory(s, [PERSONA, HUMAN, RETHINK_BLOCK])
    with pytest.raises(UnknownLabel):
        render_memory(s, ["nope"])


def test_context_block_omitted_when_empty():
    assert initial_state().get("context") is None
    assert initial_state(context="c").get("context").read_only


def test_audit_roundtrip(tmp_path):
    s = initial_state()
    for i in range(1, 4):
        s = apply_rethink(s, call(f"v{i} ünï", step=i, source="context"), clock=lambda: 1.5)
    path = tmp_path / "a" / "audit.jsonl"
    write_audit(path, s.audit)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 3
    assert set(json.loads(lines[0])) == {"step_index", "target", "source", "value", "timestamp"}
    assert tuple(read_audit(path)) == s.audit


labels = st.sampled_from([RETHINK_BLOCK, PERSONA, HUMAN, "context", "scratch", "", "other"])
calls = st.lists(st.tuples(st.text(max_size=12), labels, st.none() | labels), max_size=25)


def _run(state, seq):
    errors = 0
    for i, (value, target, source) in enumerate(seq, 1):
        try:
            state = apply_rethink(state, call(value, target=target, step=i, source=source))
        except (ReadOnlyViolation, EmptyTarget):
            errors += 1
    return state, errors


@settings(max_examples=200, deadline=None)
@given(calls)
def test_untargeted_blocks_unchanged(seq):
    before = initial_state(context="ctx", persona="p", human="h")
    after, _ = _run(before, seq)
    targets = {t for _, t, _ in seq}
    for label, block in before.blocks.items():
        if label not in targets:
            assert after.blocks[label] == block


@settings(max_examples=200, deadline=None)
@given(calls)
def test_read_only_blocks_immutable(seq):
    before = initial_state(context="ctx", persona="p", human="h")
    after, _ = _run(before, seq)
    for label in (PERSONA, HUMAN, "context"):
        assert after.blocks[label] == before.blocks[label]


@settings(max_examples=200, deadline=None)
@given(calls)
def test_count_equals_successful_calls(seq):
    after, errors = _run(initial_state(context="ctx"), seq)
    assert after.rethink_count == len(seq) - errors == len(after.audit)


@given(st.text(max_size=20))
def test_rethink_idempotent_values(value):
    once = apply_rethink(initial_state(), call(value, step=1))
    twice = apply_rethink(once, call(value, step=2))
    assert {k: b.value for k, b in once.blocks.items()} == {k: b.value for k, b in twice.blocks.items()}
    assert twice.rethink_count == once.rethink_count + 1
