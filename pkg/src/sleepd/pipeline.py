"""Batch commands behind the CLI: split, import, sleep, eval, report."""

from __future__ import annotations

import json
import logging
import random
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .answering import (
    Answer,
    answer,
    context_only_answer,
    grade,
    pass_at_k_evaluate,
)
from .backend import Backend, Usage
from .config import Condition, ExperimentConfig
from .datasets import (
    StatefulExample,
    assign_predictability_bins,
    load_examples,
    split_statements,
    write_jsonl,
    read_jsonl,
)
from .errors import DatasetError, NoAnswer, NoDerived, SchemaViolation
from .evaluation import (
    CostModel,
    EvalRecord,
    UsageLedger,
    accuracy,
    amortization_curve,
    bin_report,
    emit_report,
    pareto_frontier,
    pareto_points,
)
from .sleep import SleepFailure, context_hash, run_sleep_parallel
from .store import ContextStore, parse_selector

log = logging.getLogger(__name__)

CHECKPOINT = "records.jsonl"


# -- split ------------------------------------------------------------------------


def cmd_split(input_path: str | Path, output_path: str | Path, overrides_path: Optional[str | Path] = None) -> dict:
    """Turn ``{id, problem, answer, meta?, override?}`` records into stateful records."""
    overrides: dict[str, dict] = {}
    if overrides_path is not None:
        for lineno, rec in read_jsonl(overrides_path):
            if "id" not in rec or "question" not in rec:
                raise SchemaViolation("override needs 'id' and 'question'", lineno)
            overrides[str(rec["id"])] = rec
    out = []
    used = 0
    for lineno, rec in read_jsonl(input_path):
        if "id" not in rec or "answer" not in rec:
            raise SchemaViolation("record needs 'id' and 'answer'", lineno)
        rid = str(rec["id"])
        override = overrides.get(rid, rec.get("override"))
        if override is None and not isinstance(rec.get("problem"), str):
            raise SchemaViolation("record needs a 'problem' string or an override", lineno)
        try:
            context, question = split_statements(rec.get("problem", ""), override)
        except DatasetError as exc:
            raise type(exc)(f"record {rid!r}: {exc}") from exc
        used += override is not None
        out.append(
            StatefulExample(
                id=rid,
                context=context,
                question=question,
                answer=rec["answer"],
                predictability_score=rec.get("predictability_score"),
                meta=rec.get("meta") or {},
            )
        )
    write_jsonl(output_path, out)
    return {"records": len(out), "overrides": used}


# -- dataset helpers ----------------------------------------------------------


def dataset_examples(cfg: ExperimentConfig) -> list[StatefulExample]:
    if cfg.dataset is None:
        raise ValueError("config has no dataset")
    loaded = load_examples(cfg.path(cfg.dataset.path), cfg.dataset.format)
    if cfg.dataset.format == "multi_query":
        examples = [ex for ctx in loaded.records for ex in ctx.examples()]
    else:
        examples = list(loaded.records)
    if cfg.limit is not None and cfg.limit < len(examples):
        rng = random.Random(cfg.seed)
        examples = rng.sample(examples, cfg.limit)
    return sorted(examples, key=lambda e: e.id)


def cmd_import(store: ContextStore, path: str | Path, format: str = "stateful") -> dict:
    loaded = load_examples(path, format)
    ids = set()
    skipped = 0
    for rec in loaded.records:
        if not rec.context:
            skipped += 1
            continue
        ids.add(store.put_context(rec.context))
    return {**loaded.stats, "stored_contexts": len(ids), "empty_contexts": skipped}


# -- sleep ----------------------------------------------------------------------


def cmd_sleep(
    cfg: ExperimentConfig,
    store: ContextStore,
    backend: Backend,
    context_ids: Optional[Sequence[str]] = None,
) -> dict:
    """Run sleep over the selected contexts and attach every derived version.

    Without ``context_ids``, every nonempty context of the configured
    dataset is imported and processed. Per-context failures are listed;
    the batch continues.
    """
    if context_ids is None:
        contexts = sorted({e.context for e in dataset_examples(cfg) if e.context})
        targets = [store.put_context(c) for c in contexts]
        targets = sorted(set(targets))
    else:
        targets = list(context_ids)
    config = cfg.sleep_config()
    prior: dict[str, int] = {}
    attached = 0
    failures = []
    total = Usage()
    for cid in targets:
        try:
            raw = store.resolve(cid, "raw")
        except Exception as exc:  # noqa: BLE001
            failures.append({"context_id": cid, "index": None, "error": f"{type(exc).__name__}: {exc}"})
            continue
        prior[cid] = store.derived_count(cid)
        results = run_sleep_parallel(raw, config, backend, max_workers=cfg.workers)
        for res in results:
            if isinstance(res, SleepFailure):
                failures.append(
                    {"context_id": cid, "index": res.parallel_index, "error": f"{type(res.error).__name__}: {res.error}"}
                )
                continue
            store.attach_derived(cid, res)
            attached += 1
            total = total + res.usage
    return {
        "contexts": len(targets),
        "attached": attached,
        "prior_versions": sum(prior.values()),
        "failures": failures,
        "usage": total.to_json(),
    }


# -- eval -------------------------------------------------------------------------


def _context_kind(selector: str) -> str:
    kind, _ = parse_selector(selector)
    if kind == "raw":
        return "raw"
    return "concat_derived" if kind == "concat_all" else "derived"


def _derived_text(store: ContextStore, ex: StatefulExample, selector: str) -> str:
    if not ex.context:
        return ""
    cid = context_hash(ex.context)
    if cid not in store:
        raise NoDerived(f"context of example {ex.id!r} was never slept on")
    return store.resolve(cid, selector)


def _record(cond: Condition, ex: StatefulExample, run: int, ans: Answer, correct: bool) -> EvalRecord:
    u = ans.usage
    return EvalRecord(
        example_id=ex.id,
        context_id=context_hash(ex.context) if ex.context else "",
        condition=cond.name,
        correct=correct,
        test_tokens=u.completion_tokens + u.reasoning_tokens,
        run=run,
        numeric=None if ans.numeric is None else str(ans.numeric),
        prompt_tokens=u.prompt_tokens,
        completion_tokens=u.completion_tokens,
        reasoning_tokens=u.reasoning_tokens,
        failed=ans.failed,
    )


def evaluate_pair(
    cfg: ExperimentConfig, store: ContextStore, backend: Backend, cond: Condition, ex: StatefulExample, run: int
) -> EvalRecord:
    budget = cond.budget()
    meta = {"condition": cond.name, "example_id": ex.id, "run": run}
    temp = cfg.backend.temperature
    try:
        if cond.kind == "baseline":
            ans = answer(ex.question, ex.context, budget, backend, "raw", temperature=temp, metadata=meta)
        elif cond.kind == "sleep":
            text = _derived_text(store, ex, cond.selector)
            kind = _context_kind(cond.selector)
            ans = answer(ex.question, text, budget, backend, kind, temperature=temp, metadata=meta)
        elif cond.kind == "context_only":
            ans = context_only_answer(ex.context, budget, backend, temperature=temp, metadata=meta)
        else:
            if cond.use_derived:
                text, kind = _derived_text(store, ex, cond.selector), _context_kind(cond.selector)
            else:
                text, kind = ex.context, "raw"
            res = pass_at_k_evaluate(
                ex.question,
                text,
                budget,
                ex.answer,
                backend,
                context_kind=kind,
                temperature=cfg.pass_temperature,
                aime_format=ex.aime_format,
                max_workers=1,
                metadata=meta,
            )
            hit = next((s for s in res.samples if grade(s.numeric, ex.answer, ex.aime_format)), None)
            rep = Answer(
                "",
                hit.numeric if hit else None,
                res.usage,
                kind,
                failed=all(s.failed for s in res.samples),
            )
            return _record(cond, ex, run, rep, res.correct)
    except NoAnswer as exc:
        failed = Answer("", None, exc.usage or Usage(), cond.kind, failed=True, error=str(exc))
        return _record(cond, ex, run, failed, False)
    return _record(cond, ex, run, ans, grade(ans.numeric, ex.answer, ex.aime_format))


def read_checkpoint(path: Path) -> dict[tuple[str, str, int], EvalRecord]:
    done: dict[tuple[str, str, int], EvalRecord] = {}
    if not path.is_file():
        return done
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                rec = EvalRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, TypeError, KeyError):
                # a torn final line from an interrupted run
                log.warning("ignoring unreadable checkpoint line")
                continue
            done.setdefault(rec.key, rec)
    return done


def _drop_torn_tail(path: Path) -> None:
    """Cut a partial final line so appended records start on a fresh line."""
    if not path.is_file():
        return
    data = path.read_bytes()
    if data and not data.endswith(b"\n"):
        keep = data.rfind(b"\n") + 1
        log.warning("dropping torn checkpoint tail (%d bytes)", len(data) - keep)
        with path.open("r+b") as fh:
            fh.truncate(keep)


@dataclass
class EvalPlan:
    conditions: list[Condition]
    examples: list[StatefulExample]
    runs: int

    def pairs(self) -> list[tuple[Condition, StatefulExample, int]]:
        return [(c, e, r) for c in self.conditions for r in range(self.runs) for e in self.examples]

    def describe(self) -> list[dict[str, Any]]:
        return [
            {
                "name": c.name,
                "kind": c.kind,
                "verbosity": c.verbosity,
                "effort": c.effort,
                "k": c.k,
                "selector": c.selector if c.kind == "sleep" or c.use_derived else None,
                "examples": len(self.examples),
                "runs": self.runs,
            }
            for c in self.conditions
        ]


def plan_eval(cfg: ExperimentConfig) -> EvalPlan:
    return EvalPlan(cfg.condition_matrix(), dataset_examples(cfg), cfg.runs)


def cmd_eval(
    cfg: ExperimentConfig,
    store: ContextStore,
    backend: Backend,
    plan: Optional[EvalPlan] = None,
) -> dict:
    """Evaluate every (condition, example, run) not yet in the checkpoint, then write reports."""
    plan = plan or plan_eval(cfg)
    out_dir = cfg.path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / CHECKPOINT
    _drop_torn_tail(ckpt)
    done = read_checkpoint(ckpt)
    todo = [(c, e, r) for c, e, r in plan.pairs() if (c.name, e.id, r) not in done]
    lock = threading.Lock()

    with ckpt.open("a", encoding="utf-8") as fh:

        def run_one(item: tuple[Condition, StatefulExample, int]) -> None:
            rec = evaluate_pair(cfg, store, backend, *item)
            with lock:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
                fh.flush()

        if cfg.workers <= 1:
            for item in todo:
                run_one(item)
        else:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                list(pool.map(run_one, todo))

    reports = cmd_report(cfg, store, plan)
    return {"evaluated": len(todo), "skipped": len(done), "reports": reports}


# -- reports ------------------------------------------------------------------------


def _sleep_ledger(store: ContextStore, cid: str, selector: str) -> UsageLedger:
    ledger = UsageLedger()
    if not cid or cid not in store:
        return ledger
    kind, index = parse_selector(selector)
    n = store.derived_count(cid)
    if kind == "raw" or n == 0:
        return ledger
    if kind == "latest_derived":
        indices: Iterable[int] = [n - 1]
    elif kind == "derived":
        indices = [index]
    else:
        indices = range(n)
    for i in indices:
        ledger.record("sleep", store.load_derived(cid, i).usage, cid)
    return ledger


def _uses_sleep(cond: Condition) -> bool:
    return cond.kind == "sleep" or (cond.kind == "pass_at_k" and cond.use_derived)


def _question_index(example_id: str) -> int:
    tail = example_id.rsplit(":", 1)[-1]
    return int(tail) if tail.isdigit() else 0


def cmd_report(cfg: ExperimentConfig, store: ContextStore, plan: Optional[EvalPlan] = None) -> list[str]:
    """Rebuild every report file from the checkpoint. Output is byte-deterministic."""
    plan = plan or plan_eval(cfg)
    out_dir = cfg.path(cfg.output_dir)
    wanted = {(c.name, e.id, r) for c, e, r in plan.pairs()}
    records = sorted((r for k, r in read_checkpoint(out_dir / CHECKPOINT).items() if k in wanted), key=lambda r: r.key)
    written = []

    def emit(name: str, rows: list[dict], columns: list[str]) -> None:
        emit_report(rows, "csv", out_dir / name, columns)
        written.append(name)

    emit("records.csv", [r.to_json() for r in records], list(EvalRecord.__dataclass_fields__))
    if not records:
        return written

    model: CostModel = cfg.cost_model()
    conds = {c.name: c for c in plan.conditions}
    summary = accuracy(records)

    by_cond: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        by_cond[r.condition].append(r)
    acc_rows = []
    for name, s in summary.items():
        cond = conds[name]
        sleep_tokens = 0
        if _uses_sleep(cond):
            for cid in sorted({r.context_id for r in by_cond[name]}):
                sleep_tokens += sum(model.tokens(e.usage) for e in _sleep_ledger(store, cid, cond.selector).entries)
        test_tokens = sum(model.tokens(Usage(r.prompt_tokens, r.completion_tokens, r.reasoning_tokens)) for r in by_cond[name])
        acc_rows.append(
            {
                "condition": name,
                "kind": cond.kind,
                "accuracy": s.accuracy,
                "mean_test_tokens": s.mean_test_tokens,
                "n": s.n,
                "sleep_tokens": sleep_tokens,
                "weighted_cost_per_query": (sleep_tokens + model.test_weight_t * test_tokens) / s.n,
                "accuracy_by_run": ";".join(f"{run}:{float(a)!r}" for run, a in s.per_run_accuracy),
            }
        )
    emit(
        "accuracy.csv",
        acc_rows,
        ["condition", "kind", "accuracy", "mean_test_tokens", "n", "sleep_tokens", "weighted_cost_per_query", "accuracy_by_run"],
    )

    points = pareto_points(summary)
    front = {p.condition for p in pareto_frontier(points)}
    pareto_rows = [
        {"condition": p.condition, "avg_test_tokens": p.avg_test_tokens, "accuracy": p.accuracy, "on_frontier": p.condition in front}
        for p in sorted(points, key=lambda p: (p.avg_test_tokens, p.condition))
    ]
    emit("pareto.csv", pareto_rows, ["condition", "avg_test_tokens", "accuracy", "on_frontier"])

    examples = {e.id: e for e in plan.examples}
    scored = [e for e in plan.examples if e.predictability_score is not None]
    sleep_name = cfg.bins.sleep or next((c.name for c in plan.conditions if c.kind == "sleep"), None)
    base_name = cfg.bins.baseline or next((c.name for c in plan.conditions if c.kind == "baseline"), None)
    if scored and len(scored) == len(plan.examples) and sleep_name and base_name:
        bins = assign_predictability_bins(scored, cfg.bins.n)
        rows = [
            {
                "bin": b.bin,
                "accuracy_sleep": b.accuracy_sleep,
                "accuracy_baseline": b.accuracy_baseline,
                "gap": b.gap,
                "n_sleep": b.n_sleep,
                "n_baseline": b.n_baseline,
            }
            for b in bin_report(records, bins, sleep_name, base_name)
        ]
        emit("bins.csv", rows, ["bin", "accuracy_sleep", "accuracy_baseline", "gap", "n_sleep", "n_baseline"])

    if cfg.dataset is not None and cfg.dataset.format == "multi_query":
        rows = []
        for name in sorted(by_cond):
            cond = conds[name]
            grouped: dict[str, list[EvalRecord]] = defaultdict(list)
            for r in by_cond[name]:
                if r.run == 0:
                    grouped[examples[r.example_id].meta.get("context_group", r.context_id)].append(r)
            test_ledgers, correct, sleep_ledgers = {}, {}, {}
            for group, rs in grouped.items():
                rs.sort(key=lambda r: _question_index(r.example_id))
                ledgers = []
                for r in rs:
                    led = UsageLedger()
                    led.record("test", Usage(r.prompt_tokens, r.completion_tokens, r.reasoning_tokens), r.context_id, r.example_id)
                    ledgers.append(led)
                test_ledgers[group] = ledgers
                correct[group] = [r.correct for r in rs]
                if _uses_sleep(cond):
                    sleep_ledgers[group] = _sleep_ledger(store, rs[0].context_id, cond.selector)
            for row in amortization_curve(sleep_ledgers, test_ledgers, correct, name, model):
                rows.append(
                    {
                        "condition": row.condition,
                        "queries_per_context": row.queries_per_context,
                        "cost_per_query": row.cost_per_query,
                        "accuracy": row.accuracy,
                        "contexts": row.contexts,
                    }
                )
        emit("amortization.csv", rows, ["condition", "queries_per_context", "cost_per_query", "accuracy", "contexts"])
    return written


def records_from_checkpoint(cfg: ExperimentConfig) -> list[EvalRecord]:
    return sorted(read_checkpoint(cfg.path(cfg.output_dir) / CHECKPOINT).values(), key=lambda r: r.key)
