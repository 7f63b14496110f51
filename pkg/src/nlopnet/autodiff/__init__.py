"""Operator framework with complex automatic differentiation."""

from .linop import Linop, linop_chain, linop_plus
from .nlop import (
    AtomicNlop,
    Checkpoint,
    EvalState,
    Graph,
    NoForwardError,
    Nlop,
    StaleDerivativeError,
    as_graph,
    chain,
    checkpoint,
    combine,
    del_output,
    duplicate,
    gradient,
    link,
    permute_inputs,
    permute_outputs,
    walk,
)
from . import linop, ops

__all__ = [
    "AtomicNlop", "Checkpoint", "EvalState", "Graph", "Linop", "NoForwardError", "Nlop",
    "StaleDerivativeError", "as_graph", "chain", "checkpoint", "combine", "del_output", "duplicate",
    "gradient", "link", "linop", "linop_chain", "linop_plus", "ops", "permute_inputs",
    "permute_outputs", "walk",
]
