"""Cardinality-constrained subset selection with a pairwise submodular objective."""

from .bounding import EXACT, BoundingState, SamplingMode, SamplingPolicy, bound, complete_greedy
from .core import (
    GraphFormatError,
    MissingUtilityError,
    NeighborGraph,
    ObjectiveParams,
    PairsubError,
    Solution,
    UnknownNodeError,
    UtilityTable,
    center_utilities,
    marginal_gain,
    monotonicity_offset,
    objective_score,
)
from .distributed import DistributedConfig, distributed_select, normalize_scores
from .greedy import InfeasibleError, greedy_select, naive_greedy_select

__all__ = [
    "EXACT", "BoundingState", "SamplingMode", "SamplingPolicy", "bound", "complete_greedy",
    "GraphFormatError", "MissingUtilityError", "NeighborGraph", "ObjectiveParams", "PairsubError",
    "Solution", "UnknownNodeError", "UtilityTable", "center_utilities", "marginal_gain",
    "monotonicity_offset", "objective_score", "DistributedConfig", "distributed_select",
    "normalize_scores", "InfeasibleError", "greedy_select", "naive_greedy_select",
]
