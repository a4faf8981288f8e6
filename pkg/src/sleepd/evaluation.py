"""Token accounting, weighted/amortized cost, accuracy, pareto and report files.

All arithmetic is exact (``Fraction``); floats appear only when reports
are written.
"""

from __future__ import annotations

import csv
import json
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .backend import Usage
from .errors import EmptyGroup, IoFailure, MissingBin, ZeroQueries

Number = Union[int, float, Fraction]
PHASES = ("sleep", "test")


def _exact(x: Number) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


@dataclass(frozen=True)
class CostModel:
    test_weight_t: Fraction = Fraction(10)
    include_prompt_tokens: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "test_weight_t", _exact(self.test_weight_t))
        if self.test_weight_t <= 0:
            raise ValueError("test_weight_t must be positive")

    def tokens(self, usage: Usage) -> int:
        n = usage.completion_tokens + usage.reasoning_tokens
        if self.include_prompt_tokens:
            n += usage.prompt_tokens
        return n


@dataclass(frozen=True)
class LedgerEntry:
    phase: str
    usage: Usage
    context_id: str = ""
    example_id: Optional[str] = None


class UsageLedger:
    """Append-only usage log; safe for concurrent appends."""

    def __init__(self, entries: Iterable[LedgerEntry] = ()):
        self._entries: list[LedgerEntry] = []
        self._lock = threading.Lock()
        for e in entries:
            self.append(e)

    def append(self, entry: LedgerEntry) -> None:
        if entry.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")
        with self._lock:
            self._entries.append(entry)

    def record(self, phase: str, usage: Usage, context_id: str = "", example_id: Optional[str] = None) -> None:
        self.append(LedgerEntry(phase, usage, context_id, example_id))

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def total(self, phase: Optional[str] = None) -> Usage:
        return Usage.total([e.usage for e in self.entries if phase is None or e.phase == phase])

    def __or__(self, other: "UsageLedger") -> "UsageLedger":
        return UsageLedger(self.entries + other.entries)

    def __len__(self) -> int:
        return len(self.entries)


def phase_tokens(ledger: UsageLedger, phase: str, model: CostModel) -> int:
    return sum(model.tokens(e.usage) for e in ledger.entries if e.phase == phase)


def weighted_cost(ledger: UsageLedger, model: CostModel = CostModel()) -> Fraction:
    """sleep tokens + t * test tokens."""
    return phase_tokens(ledger, "sleep", model) + model.test_weight_t * phase_tokens(ledger, "test", model)


def amortized_cost_per_query(
    sleep_ledger: UsageLedger,
    test_ledgers: Sequence[UsageLedger],
    model: CostModel = CostModel(),
) -> Fraction:
    """(sleep total + t * sum of the N test totals) / N; sleep is split evenly."""
    n = len(test_ledgers)
    if n == 0:
        raise ZeroQueries("amortization needs at least one query")
    sleep = sum(model.tokens(e.usage) for e in sleep_ledger.entries)
    test = sum(model.tokens(e.usage) for led in test_ledgers for e in led.entries)
    return (sleep + model.test_weight_t * test) / n


# -- records and aggregation ----------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    example_id: str
    context_id: str
    condition: str
    correct: bool
    test_tokens: int
    run: int = 0
    numeric: Optional[str] = None
    prompt_tokens: int = 0
    completion_tokens: int = 0
    reasoning_tokens: int = 0
    failed: bool = False

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.condition, self.example_id, self.run)

    def to_json(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "example_id": self.example_id,
            "run": self.run,
            "context_id": self.context_id,
            "correct": self.correct,
            "test_tokens": self.test_tokens,
            "numeric": self.numeric,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "reasoning_tokens": self.reasoning_tokens,
            "failed": self.failed,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "EvalRecord":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass(frozen=True)
class ConditionSummary:
    condition: str
    accuracy: Fraction
    mean_test_tokens: Fraction
    n: int
    per_run_accuracy: tuple[tuple[int, Fraction], ...] = ()


def accuracy(records: Sequence[EvalRecord]) -> dict[str, ConditionSummary]:
    """Per-condition fraction correct and mean test tokens (pooled over runs)."""
    if not records:
        raise EmptyGroup("no records to aggregate")
    groups: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        groups[r.condition].append(r)
    out = {}
    for cond in sorted(groups):
        rs = groups[cond]
        runs: dict[int, list[EvalRecord]] = defaultdict(list)
        for r in rs:
            runs[r.run].append(r)
        out[cond] = ConditionSummary(
            condition=cond,
            accuracy=Fraction(sum(r.correct for r in rs), len(rs)),
            mean_test_tokens=Fraction(sum(r.test_tokens for r in rs), len(rs)),
            n=len(rs),
            per_run_accuracy=tuple(
                (run, Fraction(sum(r.correct for r in runs[run]), len(runs[run]))) for run in sorted(runs)
            ),
        )
    return out


@dataclass(frozen=True)
class ParetoPoint:
    avg_test_tokens: Number
    accuracy: Number
    condition: str

    def __post_init__(self) -> None:
        if not 0 <= self.accuracy <= 1:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points (fewer tokens, higher accuracy), sorted by tokens.

    Exact duplicates keep the lexicographically smallest condition label.
    """
    ordered = sorted(points, key=lambda p: (p.avg_test_tokens, -p.accuracy, p.condition))
    front: list[ParetoPoint] = []
    for p in ordered:
        if not front or p.accuracy > front[-1].accuracy:
            front.append(p)
    return front


def pareto_points(summary: Mapping[str, ConditionSummary]) -> list[ParetoPoint]:
    return [ParetoPoint(s.mean_test_tokens, s.accuracy, s.condition) for s in summary.values()]


@dataclass(frozen=True)
class BinRow:
    bin: int
    accuracy_sleep: Fraction
    accuracy_baseline: Fraction
    n_sleep: int
    n_baseline: int

    @property
    def gap(self) -> Fraction:
        return self.accuracy_sleep - self.accuracy_baseline


def bin_report(
    records: Sequence[EvalRecord],
    bins: Mapping[str, int],
    sleep_condition: str,
    baseline_condition: str,
) -> list[BinRow]:
    """Per-bin accuracy of two conditions, least predictable bin first."""
    tallies: dict[int, dict[str, list[int]]] = defaultdict(lambda: {"s": [0, 0], "b": [0, 0]})
    for r in records:
        if r.condition not in (sleep_condition, baseline_condition):
            continue
        if r.example_id not in bins:
            raise MissingBin(f"example {r.example_id!r} has no bin")
        slot = tallies[bins[r.example_id]]["s" if r.condition == sleep_condition else "b"]
        slot[0] += int(r.correct)
        slot[1] += 1

    def frac(c: list[int]) -> Fraction:
        return Fraction(c[0], c[1]) if c[1] else Fraction(0)

    return [
        BinRow(b, frac(t["s"]), frac(t["b"]), t["s"][1], t["b"][1])
        for b, t in sorted(tallies.items())
    ]


# -- report emission -------------------------------------------------------------


def _cell(value: Any) -> Any:
    if isinstance(value, Fraction):
        return int(value) if value.denominator == 1 else float(value)
    if isinstance(value, Rational) and not isinstance(value, (int, bool)):
        return float(value)
    return value


def emit_report(
    rows: Sequence[Mapping[str, Any]],
    format: str,
    path: Union[str, Path],
    columns: Optional[Sequence[str]] = None,
) -> None:
    """Write ``rows`` as CSV (with header) or JSON lines, columns in a fixed order.

    Fractions become floats written with ``repr`` precision.
    """
    if format not in ("csv", "json_lines"):
        raise ValueError(f"unknown report format {format!r}")
    cols = list(columns) if columns is not None else (list(rows[0].keys()) if rows else [])
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            if format == "csv":
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(cols)
                for row in rows:
                    writer.writerow([_csv_text(_cell(row.get(c))) for c in cols])
            else:
                for row in rows:
                    fh.write(json.dumps({c: _cell(row.get(c)) for c in cols}, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc


def _csv_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_cell(text: str) -> Any:
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_report(path: Union[str, Path], format: str) -> list[dict[str, Any]]:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        if format == "csv":
            reader = csv.reader(fh)
            header = next(reader, [])
            return [dict(zip(header, (_parse_cell(c) for c in row))) for row in reader]
        return [json.loads(line) for line in fh if line.strip()]


# -- amortization --------------------------------------------------------------


@dataclass
class AmortizationRow:
    queries_per_context: int
    condition: str
    cost_per_query: Fraction
    accuracy: Fraction
    contexts: int = 0


def amortization_curve(
    sleep_ledgers: Mapping[str, UsageLedger],
    test_ledgers: Mapping[str, Sequence[UsageLedger]],
    correct: Mapping[str, Sequence[bool]],
    condition: str,
    model: CostModel = CostModel(),
    max_n: int = 10,
) -> list[AmortizationRow]:
    """Mean amortized cost per query using the first N queries of each context.

    ``sleep_ledgers`` may omit a context (no-sleep baseline costs zero
    sleep tokens). Contexts with fewer than N queries are skipped at N.
    """
    rows = []
    for n in range(1, max_n + 1):
        costs = []
        hits = total = 0
        for cid, ledgers in sorted(test_ledgers.items()):
            if len(ledgers) < n:
                continue
            sleep = sleep_ledgers.get(cid, UsageLedger())
            costs.append(amortized_cost_per_query(sleep, ledgers[:n], model))
            marks = correct[cid][:n]
            hits += sum(marks)
            total += len(marks)
        if not costs:
            continue
        rows.append(
            AmortizationRow(n, condition, sum(costs, Fraction(0)) / len(costs), Fraction(hits, total), len(costs))
        )
    return rows
