import json
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from golden import AIME_GOLDEN
from helpers import synthetic_problem
from oracles import brute_f1
from sleepd.backend import Scripted
from sleepd.backend.mock import always
from sleepd.datasets import (
    StatefulExample,
    assign_predictability_bins,
    generate_multi_queries,
    load_examples,
    parse_generated,
    split_statements,
    statements,
    swe_file_f1,
    write_jsonl,
)
from sleepd.errors import DuplicateId, EmptyTruth, MissingScore, NoStatement, ParseFailure, SchemaViolation

YUSUF_CTX = ("Yusuf has 10 square yards of grape field. There are 87 grapes per two-thirds a square yard. "
             "Yusuf can harvest his grapes every 12 months.")
YUSUF_Q = "How many grapes can Yusuf harvest in 2 years?"


@pytest.mark.parametrize("context,query", AIME_GOLDEN)
def test_aime_golden(context, query):
    assert split_statements(f"{context} {query}") == (context, query)


def test_gsm_final_interrogative():
    assert split_statements(f"{YUSUF_CTX} {YUSUF_Q}") == (YUSUF_CTX, YUSUF_Q)


def test_single_statement():
    assert split_statements("What is 2+2?") == ("", "What is 2+2?")


def test_guards():
    assert statements("It costs 3.50 dollars, e.g. cheap. Mr. Smith vs. Dr. Who agree.") == [
        "It costs 3.50 dollars, e.g. cheap.",
        "Mr. Smith vs. Dr. Who agree.",
    ]
    assert statements("Set \\(x = 1. y\\) now. Done") == ["Set \\(x = 1. y\\) now.", "Done"]


def test_trailing_fragment_is_question():
    assert split_statements("A has 3. B has 4. how many total") == ("A has 3. B has 4.", "how many total")


def test_override_and_errors():
    assert split_statements("ignored", {"context": "c", "question": "q"}) == ("c", "q")
    with pytest.raises(NoStatement):
        split_statements("   ")
    with pytest.raises(NoStatement):
        split_statements("no punctuation at all")


@given(st.randoms(use_true_random=False))
def test_roundtrip_property(rng):
    text, sentences = synthetic_problem(rng)
    c, q = split_statements(text)
    assert q == sentences[-1]
    assert split_statements(f"{c} {q}" if c else q) == (c, q)


def _write(path, recs):
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def test_load_stateful(tmp_path):
    p = _write(tmp_path / "s.jsonl", [
        {"id": "a", "context": "c", "question": "q?", "answer": 3, "predictability_score": -1.5},
        {"id": "b", "context": "", "question": "q?", "answer": "007", "meta": {"aime_format": True}},
    ])
    res = load_examples(p)
    assert res.stats == {"records": 2}
    assert res.records[0].predictability_score == -1.5
    assert res.records[1].aime_format


def test_load_errors(tmp_path):
    with pytest.raises(SchemaViolation) as exc:
        load_examples(_write(tmp_path / "a.jsonl", [{"id": "a", "context": "c", "answer": 1},
                                                    {"id": "b", "context": "c", "answer": 1}]))
    assert exc.value.line == 1 and "question" in str(exc.value)
    with pytest.raises(DuplicateId):
        load_examples(_write(tmp_path / "b.jsonl", [{"id": "a", "context": "c", "question": "q", "answer": 1}] * 2))
    with pytest.raises(SchemaViolation):
        load_examples(_write(tmp_path / "c.jsonl", [
            {"id": "a", "context": "c", "question": "q", "answer": "1.5", "meta": {"dataset": "gsm"}}]))
    (tmp_path / "d.jsonl").write_text("{not json\n")
    with pytest.raises(SchemaViolation):
        load_examples(tmp_path / "d.jsonl")


def _mq(cid, n_gen, originals=1):
    qs = [{"question": f"o{i}", "answer": i, "origin": "original"} for i in range(originals)]
    qs += [{"question": f"g{i}", "answer": i, "origin": "generated"} for i in range(n_gen)]
    return {"context_id": cid, "context": f"context {cid}", "questions": qs}


def test_load_multi_query(tmp_path):
    res = load_examples(_write(tmp_path / "m.jsonl", [_mq("x", 3), _mq("y", 0)]), "multi_query")
    assert res.stats == {"contexts": 2, "questions": 5, "original": 2, "generated": 3}
    ex = res.records[0].examples()
    assert [e.id for e in ex] == ["x:0", "x:1", "x:2", "x:3"]
    assert ex[1].meta == {"context_group": "x", "origin": "generated"}
    with pytest.raises(SchemaViolation):
        load_examples(_write(tmp_path / "n.jsonl", [_mq("x", 1, originals=2)]), "multi_query")
    with pytest.raises(SchemaViolation):
        load_examples(_write(tmp_path / "o.jsonl", [_mq("x", 1, originals=0)]), "multi_query")


def test_write_load_roundtrip(tmp_path):
    recs = [StatefulExample("a", "c", "q", 4, 0.5, {"k": "v"})]
    write_jsonl(tmp_path / "w.jsonl", recs)
    assert load_examples(tmp_path / "w.jsonl").records == recs


GEN = """Question: Janet had 49 bouncy balls. How many did she have?
Reasoning: she had 49.
#### 49

Question: She split them into 7 baskets. How many baskets?
Answer: 7 baskets.
#### 7

A block with no final marker
"""


def test_parse_generated():
    pairs, dropped = parse_generated(GEN)
    assert [(q, v) for q, _, v in pairs] == [
        ("Janet had 49 bouncy balls. How many did she have?", 49),
        ("She split them into 7 baskets. How many baskets?", 7),
    ]
    assert dropped == 1


def test_generate_multi_queries(mock):
    mock.script(always, [Scripted.text(GEN)])
    got = generate_multi_queries("ctx", "example q", "example a", 5, mock,
                                 existing=["She split them into 7 baskets. How many baskets?"])
    assert [p.answer for p in got.pairs] == [49]
    assert got.dropped == 1 and got.duplicates == 1
    assert all(p.origin == "generated" for p in got.pairs)
    assert "Generate 5 question and answer pairs." in mock.requests[0].text()
    assert "ctx" in mock.requests[0].text()


def test_generate_zero_pairs(mock):
    mock.script(always, [Scripted.text("nothing useful")])
    with pytest.raises(ParseFailure):
        generate_multi_queries("ctx", "q", "a", 3, mock)


def _ex(i, score):
    return StatefulExample(f"e{i:03d}", "c", "q", 1, score)


def test_bins_examples():
    b = assign_predictability_bins([_ex(i, i) for i in range(1, 11)])
    assert {i for i in range(1, 11) if b[f"e{i:03d}"] == 0} == {1, 2}
    assert sorted(list(b.values()).count(k) for k in range(5)) == [2] * 5
    assert set(assign_predictability_bins([_ex(i, i) for i in range(7)], bins=1).values()) == {0}
    eq = assign_predictability_bins([_ex(i, 0.0) for i in range(13)])
    sizes = [list(eq.values()).count(k) for k in range(5)]
    assert max(sizes) - min(sizes) <= 1
    with pytest.raises(MissingScore):
        assign_predictability_bins([_ex(0, None)])


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=40), st.randoms(use_true_random=False))
def test_bins_permutation_invariant(scores, rng):
    exs = [_ex(i, float(s)) for i, s in enumerate(scores)]
    shuffled = exs[:]
    rng.shuffle(shuffled)
    assert assign_predictability_bins(exs) == assign_predictability_bins(shuffled)


def test_f1_examples():
    r = swe_file_f1({"a", "b", "c"}, {"b", "c", "d"})
    assert (r.precision, r.recall, r.f1) == (Fraction(2, 3),) * 3
    r = swe_file_f1({"a"}, {"a"})
    assert (r.precision, r.recall, r.f1) == (1, 1, 1)
    r = swe_file_f1({"a"}, {"b"})
    assert (r.precision, r.recall, r.f1) == (0, 0, 0)
    assert swe_file_f1(set(), {"b"}).f1 == 0
    with pytest.raises(EmptyTruth):
        swe_file_f1({"a"}, set())


files = st.sets(st.sampled_from([f"f{i}.py" for i in range(8)]), max_size=8)


@given(files, files.filter(bool))
def test_f1_matches_brute(p, t):
    r = swe_file_f1(p, t)
    assert (r.precision, r.recall, r.f1) == brute_f1(list(p), list(t))
