"""Sleep-time compute orchestration.

Persist a context, derive a re-represented context offline with a
rethink/finish tool loop, answer later queries against it under explicit
test-time budgets, and account for weighted, amortized token cost.
"""

from .answering import Answer, Budget, answer, context_only_answer, extract_numeric, pass_at_k_evaluate
from .evaluation import CostModel, UsageLedger, amortized_cost_per_query, pareto_frontier, weighted_cost
from .memory import MemoryBlock, MemoryState, RethinkCall, apply_finish, apply_rethink, render_memory
from .sleep import DerivedContext, SleepConfig, concat_derived, run_sleep, run_sleep_parallel
from .store import ContextStore

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "Budget",
    "ContextStore",
    "CostModel",
    "DerivedContext",
    "MemoryBlock",
    "MemoryState",
    "RethinkCall",
    "SleepConfig",
    "UsageLedger",
    "amortized_cost_per_query",
    "answer",
    "apply_finish",
    "apply_rethink",
    "concat_derived",
    "context_only_answer",
    "extract_numeric",
    "pareto_frontier",
    "pass_at_k_evaluate",
    "render_memory",
    "run_sleep",
    "run_sleep_parallel",
    "weighted_cost",
]
