"""Fixture builders shared by the pipeline and acceptance tests."""

from __future__ import annotations

import json
import random
from pathlib import Path

import yaml


def eval_fixture(root: Path, n: int = 20, seed: int = 7, conditions=None) -> Path:
    """Write a stateful dataset, a mock script and a config under ``root``.

    Each example i has a raw context ``Item i has ...`` and a derived note
    ``Derived note i: ...``. Baseline answers are long and right for even
    i; sleep answers are short and right unless i % 3 == 0.
    """
    rng = random.Random(seed)
    root.mkdir(parents=True, exist_ok=True)
    records, script = [], []
    sleep_routes, derived_routes, raw_routes = [], [], []
    for i in range(n):
        a, b = rng.randint(2, 30), rng.randint(2, 30)
        truth = a * b
        records.append(
            {
                "id": f"ex{i:02d}",
                "context": f"Item {i} has {a} apples. Each apple of item {i} weighs {b} grams.",
                "question": f"What is the total weight of the apples of item {i}?",
                "answer": truth,
                "predictability_score": round(rng.uniform(-60, -5), 3),
            }
        )
        note = f"Derived note {i}: item {i} apples weigh {truth} grams in total."
        sleep_routes += [
            {"matcher_substring": f"<context>\nItem {i} has", "output_kind": "tool_call",
             "payload": {"name": "rethink_memory",
                         "arguments": {"new_memory": note, "target_block_label": "rethink_memory_block",
                                       "source_block_label": "context"}}},
            {"matcher_substring": f"<context>\nItem {i} has", "output_kind": "tool_call",
             "payload": {"name": "finish_rethinking_memory", "arguments": {}}},
        ]
        sleep_val = truth if i % 3 else truth + 1
        derived_routes.append(
            {"matcher_substring": f"Derived note {i}:", "output_kind": "tool_call", "repeat": True,
             "payload": {"name": "send_message", "arguments": {"message": f"The answer is {sleep_val}"}}}
        )
        base_val = truth if i % 2 == 0 else truth - 1
        reasoning = " ".join(["step"] * (20 + i))
        raw_routes.append(
            {"matcher_substring": f"Item {i} has", "output_kind": "tool_call", "repeat": True,
             "payload": {"name": "send_message",
                         "arguments": {"message": f"{reasoning} {a} times {b}. The answer is {base_val}"}}}
        )
    script = sleep_routes + derived_routes + raw_routes
    (root / "data.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records))
    (root / "script.jsonl").write_text("".join(json.dumps(r) + "\n" for r in script))
    cfg = {
        "backend": {"kind": "mock", "script": "script.jsonl"},
        "dataset": {"path": "data.jsonl", "format": "stateful"},
        "store_dir": "store",
        "output_dir": "out",
        "conditions": conditions
        or [
            {"name": "baseline-v0", "kind": "baseline", "verbosity": 0},
            {"name": "sleep-v0", "kind": "sleep", "verbosity": 0},
        ],
    }
    (root / "config.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return root / "config.yaml"


class FailAfter:
    """Backend wrapper that dies after ``n`` calls, simulating an interrupted run."""

    class Interrupted(Exception):
        pass

    def __init__(self, inner, n: int):
        self.inner = inner
        self.n = n
        self.calls = 0

    def complete(self, request):
        if self.calls >= self.n:
            raise self.Interrupted(f"interrupted after {self.n} calls")
        self.calls += 1
        return self.inner.complete(request)


_WORDS = ["apples", "tokens", "Mr. Lee", "Dr. Park", "3.5 kg", "e.g. pears", "the park", "i.e. twice",
          "vs. Bob", "n", "\\(x^2 + 1.5\\)", "(seven)", "12,000 steps", "a basket", "\"quoted\" words"]
_ENDS = [".", "?", "!", "?!", "...", ".)", ".\""]


def synthetic_problem(rng) -> tuple[str, list[str]]:
    """A multi-sentence problem whose sentence list is known by construction."""
    sentences = []
    for _ in range(rng.randint(1, 6)):
        words = [rng.choice(["Alice", "Bob", "The store", "A train"])]
        words += [rng.choice(_WORDS) for _ in range(rng.randint(1, 6))]
        sentences.append(" ".join(words) + rng.choice(_ENDS))
    sep = [rng.choice([" ", "  ", "\n", " \t"]) for _ in sentences]
    text = "".join(s + d for s, d in zip(sentences, sep)).rstrip()
    return text, sentences
