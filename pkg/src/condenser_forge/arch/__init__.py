"""Architecture DSL, shape checking, cost model, constraints and compilation."""

from .constraints import DEFAULT_BUDGET_FLOPS, FeasibilityReport, Violation, indicator, validate_constraints
from .cost import CostReport, NodeCost, cost
from .graph import Graph, compile_arch
from .reference import reference_arch, reference_source, with_maxpool_downsampling
from .shapes import check_structure, infer_shapes
from .spec import INPUT_ID, OPS, ArchSpec, Node, chain, parse_arch, print_arch
from .weights import load_weights, save_weights

__all__ = [
    "ArchSpec", "CostReport", "DEFAULT_BUDGET_FLOPS", "FeasibilityReport", "Graph", "INPUT_ID",
    "Node", "NodeCost", "OPS", "Violation", "chain", "check_structure", "compile_arch", "cost",
    "indicator", "infer_shapes", "load_weights", "parse_arch", "print_arch", "reference_arch",
    "reference_source", "save_weights", "validate_constraints", "with_maxpool_downsampling",
]
