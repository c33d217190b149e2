"""Out-of-core execution of the selection pipelines."""

from .engine import BudgetExceeded, Engine, MemoryBudget
from .pipelines import (
    ShardedBoundingState,
    bound_pipeline,
    fan_out_edges,
    ingest_graph,
    ingest_ids,
    ingest_utilities,
    kth_largest_pipeline,
    max_utility_pipeline,
    min_utility_pipeline,
    read_values,
    score_pipeline,
)
from .records import DataflowError, ShardedCollection, load_collection

__all__ = [
    "BudgetExceeded", "Engine", "MemoryBudget", "ShardedBoundingState", "bound_pipeline",
    "fan_out_edges", "ingest_graph", "ingest_ids", "ingest_utilities", "kth_largest_pipeline",
    "max_utility_pipeline", "min_utility_pipeline", "read_values", "score_pipeline",
    "DataflowError", "ShardedCollection", "load_collection",
]
