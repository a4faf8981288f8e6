"""Experiment configuration: one YAML document with ``${VAR}`` interpolation."""

from __future__ import annotations

import os
import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .answering import Budget
from .backend import Backend, RemoteBackend, RetryPolicy, load_script
from .evaluation import CostModel
from .sleep import SleepConfig

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")

def interpolate(value: Any) -> Any:
    """Replace ``${VAR}`` / ``${VAR:-default}`` in every string, recursively."""
    if isinstance(value, str):
        return _VAR.sub(lambda m: os.environ.get(m.group(1), m.group(2) or ""), value)
    if isinstance(value, dict):
        return {k: interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate(v) for v in value]
    return value


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackendSettings(_Model):
    kind: Literal["remote", "mock"] = "remote"
    model: str = "gpt-4o-mini"
    base_url: Optional[str] = None
    api_key: Optional[str] = None
    temperature: float = Field(0.0, ge=0)
    script: Optional[str] = None
    extension_prompt: str = ""
    max_extensions: int = Field(1, ge=0)
    max_retries: int = Field(3, ge=0)
    timeout: float = Field(120.0, gt=0)


class CostSettings(_Model):
    t: Fraction = Fraction(10)
    include_prompt_tokens: bool = False

    @field_validator("t", mode="before")
    @classmethod
    def _exact_t(cls, v: Any) -> Fraction:
        t = Fraction(str(v))
        if t <= 0:
            raise ValueError("t must be positive")
        return t


class SleepSettings(_Model):
    max_rethink_calls: int = Field(10, ge=1)
    parallel_k: int = Field(1, ge=1)
    effort: Optional[Literal["low", "medium", "high"]] = None
    prompt_id: str = "default"
    max_output_tokens: Optional[int] = Field(None, gt=0)


class DatasetSettings(_Model):
    path: str
    format: Literal["stateful", "multi_query"] = "stateful"


class Condition(_Model):
    name: str
    kind: Literal["baseline", "sleep", "pass_at_k", "context_only"]
    verbosity: int = Field(0, ge=0, le=4)
    effort: Optional[Literal["low", "medium", "high"]] = None
    max_output_tokens: Optional[int] = Field(None, gt=0)
    k: int = Field(1, ge=1)
    selector: str = "latest_derived"
    # pass@k only: answer against the stored derived context instead of raw
    use_derived: bool = False

    def budget(self) -> Budget:
        return Budget(self.verbosity, self.effort, self.max_output_tokens, self.k)


class BinSettings(_Model):
    n: int = Field(5, ge=1)
    sleep: Optional[str] = None
    baseline: Optional[str] = None


class ExperimentConfig(_Model):
    backend: BackendSettings = BackendSettings()
    cost: CostSettings = CostSettings()
    sleep: SleepSettings = SleepSettings()
    dataset: Optional[DatasetSettings] = None
    conditions: Optional[list[Condition]] = None
    ladder: Literal["verbosity", "effort"] = "verbosity"
    bins: BinSettings = BinSettings()
    store_dir: str = "store"
    output_dir: str = "out"
    seed: int = 0
    limit: Optional[int] = Field(None, ge=1)
    runs: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    pass_temperature: float = Field(0.7, ge=0)
    base_dir: str = "."

    @model_validator(mode="after")
    def _unique_conditions(self) -> "ExperimentConfig":
        if self.conditions:
            names = [c.name for c in self.conditions]
            if len(set(names)) != len(names):
                raise ValueError("condition names must be unique")
        return self

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else Path(self.base_dir) / q

    def cost_model(self) -> CostModel:
        return CostModel(self.cost.t, self.cost.include_prompt_tokens)

    def sleep_config(self) -> SleepConfig:
        s = self.sleep
        return SleepConfig(
            max_rethink_calls=s.max_rethink_calls,
            parallel_k=s.parallel_k,
            effort=s.effort,
            prompt_id=s.prompt_id,
            max_output_tokens=s.max_output_tokens,
            temperature=self.backend.temperature,
        )

    def condition_matrix(self) -> list[Condition]:
        if self.conditions:
            return list(self.conditions)
        selector = "concat_all" if self.sleep.parallel_k > 1 else "latest_derived"
        if self.ladder == "effort":
            return [
                Condition(name=f"{kind}-{e}", kind=kind, effort=e, selector=selector)
                for kind in ("baseline", "sleep")
                for e in ("low", "medium", "high")
            ]
        return [
            Condition(name=f"{kind}-v{v}", kind=kind, verbosity=v, selector=selector)
            for kind in ("baseline", "sleep")
            for v in range(5)
        ]

    def validate_paths(self) -> None:
        missing = []
        if self.dataset is not None and not self.path(self.dataset.path).is_file():
            missing.append(self.dataset.path)
        if self.backend.kind == "mock":
            if not self.backend.script:
                raise ValueError("mock backend needs backend.script")
            if not self.path(self.backend.script).is_file():
                missing.append(self.backend.script)
        if missing:
            raise FileNotFoundError(f"config references missing files: {missing}")

    def make_backend(self) -> Backend:
        b = self.backend
        if b.kind == "mock":
            return load_script(self.path(b.script))
        return RemoteBackend(
            model=b.model,
            base_url=b.base_url or None,
            api_key=b.api_key or None,
            timeout=b.timeout,
            retry=RetryPolicy(max_retries=b.max_retries),
            extension_prompt=b.extension_prompt,
            max_extensions=b.max_extensions,
        )


def load_config(path: str | Path, validate: bool = True) -> ExperimentConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    raw = interpolate(raw)
    raw.setdefault("base_dir", str(path.parent))
    cfg = ExperimentConfig.model_validate(raw)
    if validate:
        cfg.validate_paths()
    return cfg

