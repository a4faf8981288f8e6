"""HTTP front door: contexts persist between requests, sleep and query on demand."""

from __future__ import annotations

import json
import threading
from dataclasses import replace
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .answering import Budget, answer
from .backend import Backend, Usage
from .errors import BackendError, IndexOutOfRange, NoAnswer, NoDerived, UnknownContext
from .sleep import SleepConfig, SleepFailure, run_sleep_parallel
from .store import ContextStore, parse_selector

Effort = Optional[Literal["low", "medium", "high"]]


class ContextIn(BaseModel):
    raw: str = Field(min_length=1)
    tags: list[str] = []


class SleepIn(BaseModel):
    max_rethink_calls: Optional[int] = Field(None, ge=1)
    parallel_k: Optional[int] = Field(None, ge=1)
    effort: Effort = None
    prompt_id: Optional[str] = None


class BudgetIn(BaseModel):
    verbosity_level: int = Field(0, ge=0, le=4)
    effort: Effort = None
    max_output_tokens: Optional[int] = Field(None, gt=0)
    sample_k: int = Field(1, ge=1)


class QueryIn(BaseModel):
    question: str = Field(min_length=1)
    budget: BudgetIn = BudgetIn()
    selector: str = "latest_derived"


class _SingleFlight:
    def __init__(self) -> None:
        self._guard = threading.Lock()
        self._running: set[str] = set()

    def try_enter(self, key: str) -> bool:
        with self._guard:
            if key in self._running:
                return False
            self._running.add(key)
            return True

    def leave(self, key: str) -> None:
        with self._guard:
            self._running.discard(key)


def create_app(store: ContextStore, backend: Backend, sleep_defaults: SleepConfig = SleepConfig()) -> FastAPI:
    app = FastAPI(title="sleepd")
    inflight = _SingleFlight()

    def require(context_id: str) -> None:
        if context_id not in store:
            raise HTTPException(404, f"unknown context {context_id}")

    @app.post("/contexts")
    def put_context(body: ContextIn) -> dict:
        cid = store.put_context(body.raw, set(body.tags) or None)
        return {"context_id": cid}

    @app.get("/contexts")
    def list_contexts() -> StreamingResponse:
        def lines():
            for cid in store.context_ids():
                yield json.dumps({"context_id": cid, "derived": store.derived_count(cid)}) + "\n"

        return StreamingResponse(lines(), media_type="application/x-ndjson")

    @app.get("/contexts/{context_id}")
    def get_context(context_id: str) -> dict:
        require(context_id)
        rec = store.get(context_id)
        return {
            "context_id": context_id,
            "raw_chars": len(rec.raw),
            "tags": sorted(rec.tags),
            "derived": [
                {
                    "version": i,
                    "termination": d.termination,
                    "rethink_count": d.rethink_count,
                    "parallel_index": d.parallel_index,
                    "usage": d.usage.to_json(),
                }
                for i, d in enumerate(rec.derived)
            ],
        }

    @app.post("/contexts/{context_id}/sleep")
    def sleep(context_id: str, body: SleepIn = SleepIn()) -> dict:
        require(context_id)
        overrides = {k: v for k, v in body.model_dump().items() if v is not None}
        try:
            config = replace(sleep_defaults, **overrides)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        if not inflight.try_enter(context_id):
            raise HTTPException(409, f"sleep already running for {context_id}")
        try:
            raw = store.resolve(context_id, "raw")
            results = run_sleep_parallel(raw, config, backend)
            failures = [r for r in results if isinstance(r, SleepFailure)]
            done = [r for r in results if not isinstance(r, SleepFailure)]
            if not done:
                raise HTTPException(502, f"every sleep run failed: {failures[0].error}")
            versions = [store.attach_derived(context_id, d) for d in done]
        finally:
            inflight.leave(context_id)
        return {
            "version": versions[-1],
            "versions": versions,
            "usage": Usage.total([d.usage for d in done]).to_json(),
            "terminations": [d.termination for d in done],
            "failures": [f"{type(f.error).__name__}: {f.error}" for f in failures],
        }

    @app.post("/contexts/{context_id}/query")
    def query(context_id: str, body: QueryIn) -> dict:
        require(context_id)
        try:
            kind, _ = parse_selector(body.selector)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        try:
            text = store.resolve(context_id, body.selector)
        except (NoDerived, IndexOutOfRange) as exc:
            raise HTTPException(409, str(exc)) from exc
        except UnknownContext as exc:
            raise HTTPException(404, str(exc)) from exc
        context_kind = {"raw": "raw", "concat_all": "concat_derived"}.get(kind, "derived")
        budget = Budget(**body.budget.model_dump())
        try:
            ans = answer(body.question, text, budget, backend, context_kind, metadata={"context_id": context_id})
        except (BackendError, NoAnswer) as exc:
            raise HTTPException(502, f"{type(exc).__name__}: {exc}") from exc
        return {
            "answer": ans.raw_text,
            "numeric": None if ans.numeric is None else str(ans.numeric),
            "context_kind": ans.context_kind,
            "usage": ans.usage.to_json(),
        }

    return app
