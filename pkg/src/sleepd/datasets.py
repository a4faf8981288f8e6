"""Stateful dataset construction and loading.

Covers splitting a problem into (context, question), the line-delimited
record formats, synthetic multi-query generation, predictability
binning and the SWE modified-file F1 metric.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, Union

from . import prompts
from .backend import Backend, ChatRequest, Message
from .errors import DuplicateId, EmptyTruth, MissingScore, NoStatement, ParseFailure, SchemaViolation

log = logging.getLogger(__name__)

ABBREVIATIONS = frozenset({"e.g.", "i.e.", "Mr.", "Dr.", "vs."})
_CLOSERS = "\"')]}”’"
_OPENERS = "\"'([{“‘"

AnswerValue = Union[str, int, Fraction]

# Multi-Query GSM-Symbolic dataset statistics
MULTI_QUERY_STATS = {
    "p1": {"questions": 12043, "contexts": 1095, "original": 1095, "generated": 10948},
    "p2": {"questions": 5497, "contexts": 500, "original": 500, "generated": 4997},
}


# -- splitting ---------------------------------------------------------------


def _math_spans(text: str) -> list[tuple[int, int]]:
    spans = []
    for m in re.finditer(r"\\\((.*?)\\\)|\\\[(.*?)\\\]", text, re.DOTALL):
        spans.append((m.start(), m.end()))
    return spans


def _boundaries(text: str) -> list[int]:
    """Offsets just past each sentence-final punctuation run (plus closers)."""
    spans = _math_spans(text)
    out = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in ".?!" and not any(a <= i < b for a, b in spans):
            j = i + 1
            while j < n and text[j] in ".?!":
                j += 1
            while j < n and text[j] in _CLOSERS:
                j += 1
            if j == n or text[j].isspace():
                if not (ch == "." and _is_abbreviation(text, i)):
                    out.append(j)
            i = j
            continue
        i += 1
    return out


def _is_abbreviation(text: str, dot: int) -> bool:
    m = re.search(r"\S+$", text[: dot + 1])
    return m is not None and m.group().lstrip(_OPENERS) in ABBREVIATIONS


def statements(text: str) -> list[str]:
    """Split ``text`` into statements; a trailing unterminated fragment counts as one."""
    ends = _boundaries(text)
    out = []
    start = 0
    for end in ends:
        chunk = text[start:end].strip()
        if chunk:
            out.append(chunk)
        start = end
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def split_statements(problem: str, override: Optional[dict] = None) -> tuple[str, str]:
    """Return ``(context, question)``: everything before the final statement, and it.

    ``override`` (``{"context", "question"}``) bypasses splitting.
    """
    if override is not None:
        return str(override.get("context", "")), str(override["question"])
    if not problem or not problem.strip():
        raise NoStatement("problem text is empty")
    ends = [e for e in _boundaries(problem) if problem[:e].strip()]
    if not ends:
        raise NoStatement("no sentence-final punctuation found")
    if problem[ends[-1]:].strip():
        cut = ends[-1]
    elif len(ends) > 1:
        cut = ends[-2]
    else:
        cut = 0
    return problem[:cut].strip(), problem[cut:].strip()


# -- records -----------------------------------------------------------------


@dataclass
class StatefulExample:
    id: str
    context: str
    question: str
    answer: AnswerValue
    predictability_score: Optional[float] = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def aime_format(self) -> bool:
        return bool(self.meta.get("aime_format", False))

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "context": self.context,
            "question": self.question,
            "answer": _answer_json(self.answer),
        }
        if self.predictability_score is not None:
            out["predictability_score"] = self.predictability_score
        if self.meta:
            out["meta"] = self.meta
        return out


@dataclass
class QuestionEntry:
    question: str
    answer: AnswerValue
    origin: str = "generated"

    def to_json(self) -> dict[str, Any]:
        return {"question": self.question, "answer": _answer_json(self.answer), "origin": self.origin}


@dataclass
class MultiQueryContext:
    context_id: str
    context: str
    questions: list[QuestionEntry]

    @property
    def n(self) -> int:
        return len(self.questions)

    def to_json(self) -> dict[str, Any]:
        return {
            "context_id": self.context_id,
            "context": self.context,
            "questions": [q.to_json() for q in self.questions],
        }

    def examples(self) -> list[StatefulExample]:
        """One stateful example per question, ids ``<context_id>:<i>``."""
        return [
            StatefulExample(
                id=f"{self.context_id}:{i}",
                context=self.context,
                question=q.question,
                answer=q.answer,
                meta={"context_group": self.context_id, "origin": q.origin},
            )
            for i, q in enumerate(self.questions)
        ]


@dataclass(frozen=True)
class SweRecord:
    pr_id: str
    predicted_files: frozenset[str]
    truth_files: frozenset[str]


@dataclass
class LoadResult:
    records: list
    stats: dict[str, int]

    def __iter__(self) -> Iterator:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _answer_json(value: AnswerValue) -> Union[str, int]:
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else str(value)
    return value


def _nonempty_str(rec: dict, key: str, line: int, allow_empty: bool = False) -> str:
    if key not in rec:
        raise SchemaViolation(f"missing field {key!r}", line)
    val = rec[key]
    if not isinstance(val, str) or (not allow_empty and not val.strip()):
        raise SchemaViolation(f"field {key!r} must be a nonempty string", line)
    return val


def _answer_field(rec: dict, line: int, integer: bool) -> AnswerValue:
    if "answer" not in rec:
        raise SchemaViolation("missing field 'answer'", line)
    val = rec["answer"]
    if isinstance(val, bool) or not isinstance(val, (str, int, float)):
        raise SchemaViolation("field 'answer' must be a string or number", line)
    if integer:
        try:
            parsed = Fraction(str(val).replace(",", "").strip())
        except (ValueError, ZeroDivisionError):
            raise SchemaViolation(f"answer {val!r} is not an integer", line) from None
        if parsed.denominator != 1:
            raise SchemaViolation(f"answer {val!r} is not an integer", line)
    return val


def read_jsonl(path: Union[str, Path]) -> Iterator[tuple[int, dict]]:
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(rec, dict):
                raise SchemaViolation("record must be a JSON object", lineno)
            yield lineno, rec


def parse_stateful(rec: dict, line: int) -> StatefulExample:
    meta = rec.get("meta") or {}
    if not isinstance(meta, dict):
        raise SchemaViolation("field 'meta' must be an object", line)
    integer = bool(meta.get("aime_format")) or meta.get("dataset") in ("gsm", "aime")
    score = rec.get("predictability_score")
    if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
        raise SchemaViolation("predictability_score must be a number", line)
    return StatefulExample(
        id=_nonempty_str(rec, "id", line),
        # empty context is legal: single-statement problems split to ("", question)
        context=_nonempty_str(rec, "context", line, allow_empty=True),
        question=_nonempty_str(rec, "question", line),
        answer=_answer_field(rec, line, integer),
        predictability_score=None if score is None else float(score),
        meta=meta,
    )


def parse_multi_query(rec: dict, line: int) -> MultiQueryContext:
    cid = _nonempty_str(rec, "context_id", line)
    context = _nonempty_str(rec, "context", line)
    qs = rec.get("questions")
    if not isinstance(qs, list) or not qs:
        raise SchemaViolation("field 'questions' must be a nonempty list", line)
    entries = []
    for q in qs:
        if not isinstance(q, dict):
            raise SchemaViolation("each question must be an object", line)
        origin = q.get("origin")
        if origin not in ("original", "generated"):
            raise SchemaViolation(f"question origin must be 'original' or 'generated', got {origin!r}", line)
        entries.append(QuestionEntry(_nonempty_str(q, "question", line), _answer_field(q, line, False), origin))
    originals = sum(q.origin == "original" for q in entries)
    if originals != 1:
        raise SchemaViolation(f"expected exactly one original question, found {originals}", line)
    return MultiQueryContext(cid, context, entries)


def parse_swe(rec: dict, line: int) -> SweRecord:
    pr = rec.get("pr_id")
    if pr is None or isinstance(pr, bool):
        raise SchemaViolation("missing field 'pr_id'", line)
    files = {}
    for key in ("predicted_files", "truth_files"):
        val = rec.get(key)
        if not isinstance(val, list) or not all(isinstance(f, str) for f in val):
            raise SchemaViolation(f"field {key!r} must be a list of strings", line)
        files[key] = frozenset(val)
    return SweRecord(str(pr), files["predicted_files"], files["truth_files"])


def load_examples(path: Union[str, Path], format: str = "stateful") -> LoadResult:
    """Load and validate a line-delimited record file.

    ``format`` is ``stateful``, ``multi_query`` or ``swe``. Raises
    :class:`SchemaViolation` (with line number) or :class:`DuplicateId`.
    """
    parsers = {"stateful": parse_stateful, "multi_query": parse_multi_query, "swe": parse_swe}
    if format not in parsers:
        raise ValueError(f"unknown format {format!r}")
    parse = parsers[format]
    records = []
    seen: set[str] = set()
    for lineno, rec in read_jsonl(path):
        item = parse(rec, lineno)
        key = {"stateful": "id", "multi_query": "context_id", "swe": "pr_id"}[format]
        ident = getattr(item, key)
        if ident in seen:
            raise DuplicateId(f"duplicate {key} {ident!r}", lineno)
        seen.add(ident)
        records.append(item)

    if format == "multi_query":
        original = sum(q.origin == "original" for r in records for q in r.questions)
        total = sum(r.n for r in records)
        stats = {"contexts": len(records), "questions": total, "original": original, "generated": total - original}
    else:
        stats = {"records": len(records)}
    log.info("loaded %s from %s: %s", format, path, stats)
    return LoadResult(records, stats)


def write_jsonl(path: Union[str, Path], records: Iterable[Any]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json() if hasattr(r, "to_json") else r, ensure_ascii=False) + "\n")
            n += 1
    return n


# -- multi-query generation --------------------------------------------------


@dataclass
class GeneratedQuestions:
    pairs: list[QuestionEntry]
    dropped: int = 0
    duplicates: int = 0


_FINAL = re.compile(r"^\s*####\s*(.*?)\s*$")
_LABEL = re.compile(r"^\s*(?:\*\*)?(question|q|answer|a)\s*[:.]\s*(?:\*\*)?\s*", re.IGNORECASE)


def _strip_label(line: str) -> str:
    return _LABEL.sub("", line, count=1)


def _split_chunk(lines: list[str]) -> Optional[tuple[str, str]]:
    while lines and not lines[0].strip():
        lines = lines[1:]
    if not lines:
        return None
    # explicit "Answer:" label wins; else the first paragraph is the question
    for i, line in enumerate(lines[1:], 1):
        if re.match(r"^\s*(?:\*\*)?answer\s*[:.]", line, re.IGNORECASE):
            q_lines, a_lines = lines[:i], lines[i:]
            break
    else:
        blank = next((i for i, line in enumerate(lines) if not line.strip()), None)
        cut = blank if blank is not None else 1
        q_lines, a_lines = lines[:cut], lines[cut:]
    question = " ".join(_strip_label(line).strip() for line in q_lines if line.strip())
    reasoning = "\n".join(_strip_label(line) if j == 0 else line for j, line in enumerate(a_lines)).strip()
    if not question:
        return None
    return question, reasoning


def parse_generated(text: str) -> tuple[list[tuple[str, str, Fraction]], int]:
    """Parse alternating question/answer blocks terminated by ``#### value`` lines.

    Returns ``(pairs, dropped)`` with pairs as ``(question, reasoning, value)``.
    """
    pairs = []
    dropped = 0
    buf: list[str] = []
    for line in text.splitlines():
        m = _FINAL.match(line)
        if m is None:
            buf.append(line)
            continue
        chunk = _split_chunk(buf)
        buf = []
        raw_value = m.group(1).replace(",", "").replace("$", "").strip()
        try:
            value = Fraction(raw_value)
        except (ValueError, ZeroDivisionError):
            value = None
        if chunk is None or value is None:
            dropped += 1
            continue
        pairs.append((chunk[0], chunk[1], value))
    if any(line.strip() for line in buf):
        dropped += 1
    return pairs, dropped


def generate_multi_queries(
    context: str,
    example_q: str,
    example_a: str,
    n: int,
    backend: Backend,
    existing: Sequence[str] = (),
    temperature: float = 0.0,
) -> GeneratedQuestions:
    """Ask the model for ~``n`` more question/answer pairs about ``context``.

    Malformed blocks are dropped and counted; exact duplicates of
    ``example_q``, ``existing`` or earlier generated questions are removed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    body = prompts.MULTI_QUERY_PROMPT.format(context=context, question=example_q, answer=example_a)
    request = ChatRequest(
        messages=[Message("user", body + "\n" + prompts.MULTI_QUERY_COUNT_HINT.format(n=n))],
        temperature=temperature,
        metadata={"phase": "generate"},
    )
    response = backend.complete(request)
    output = response.outputs[0]
    parsed, dropped = parse_generated(output.text)
    seen = {example_q, *existing}
    pairs = []
    duplicates = 0
    for question, _reasoning, value in parsed:
        if question in seen:
            duplicates += 1
            continue
        seen.add(question)
        answer: AnswerValue = int(value) if value.denominator == 1 else str(value)
        pairs.append(QuestionEntry(question, answer, "generated"))
    if dropped:
        log.warning("dropped %d malformed question/answer blocks", dropped)
    if not pairs:
        raise ParseFailure(f"no question/answer pairs recovered ({dropped} malformed, {duplicates} duplicate)")
    return GeneratedQuestions(pairs, dropped, duplicates)


# -- predictability ------------------------------------------------------------


def assign_predictability_bins(examples: Sequence[StatefulExample], bins: int = 5) -> dict[str, int]:
    """Quantile bins by score rank; bin 0 is the least predictable.

    Ties on score are broken by id, so bin sizes differ by at most one
    even when every score is equal.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    missing = [e.id for e in examples if e.predictability_score is None]
    if missing:
        raise MissingScore(f"{len(missing)} examples lack a predictability score, e.g. {missing[0]!r}")
    ranked = sorted(examples, key=lambda e: (e.predictability_score, e.id))
    n = len(ranked)
    return {e.id: rank * bins // n for rank, e in enumerate(ranked)}


# -- SWE metric -----------------------------------------------------------------


@dataclass(frozen=True)
class F1Result:
    precision: Fraction
    recall: Fraction
    f1: Fraction


def swe_file_f1(predicted: Iterable[str], truth: Iterable[str]) -> F1Result:
    p, t = set(predicted), set(truth)
    if not t:
        raise EmptyTruth("truth file set is empty")
    hit = len(p & t)
    precision = Fraction(hit, len(p)) if p else Fraction(0)
    recall = Fraction(hit, len(t))
    f1 = Fraction(0) if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return F1Result(precision, recall, f1)
