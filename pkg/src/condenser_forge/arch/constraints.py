"""The feasibility indicator over architectures.

C1  total FLOPs must be strictly under the budget.
C2  no pointwise (1x1) convolution with stride > 1, anywhere.
C3  after the input layer, spatial extent may only shrink through ``aads``.
    Input-layer nodes are the direct consumers of the input node. Attention
    condensers restore their input extent and ``gap`` feeds the classifier,
    so neither counts as downsampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .cost import CostReport, cost
from .shapes import infer_shapes
from .spec import INPUT_ID, ArchSpec

DEFAULT_BUDGET_FLOPS = 100_000_000


@dataclass
class Violation:
    code: str
    node: str | None
    message: str


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)
    cost: CostReport | None = None
    budget_flops: int = DEFAULT_BUDGET_FLOPS

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "budget_flops": self.budget_flops,
            "violations": [vars(v) for v in self.violations],
        }


def validate_constraints(spec: ArchSpec, budget_flops: int = DEFAULT_BUDGET_FLOPS,
                         flops_per_mac: int = 2) -> FeasibilityReport:
    order, ins, outs, hp = infer_shapes(spec)
    report = cost(spec, flops_per_mac=flops_per_mac)
    found: list[Violation] = []
    if report.flops >= budget_flops:
        found.append(Violation("C1", None, f"{report.flops} FLOPs is not under the budget of {budget_flops}"))
    nm = spec.node_map()
    input_layer = set(spec.succs()[INPUT_ID])
    for nid in order:
        op = nm[nid].op
        p = hp[nid]
        if op in ("conv", "dwconv", "pwconv") and p["k"] == 1 and p["s"] > 1:
            found.append(Violation("C2", nid, f"pointwise convolution with stride {p['s']}"))
        if op in ("input", "gap", "dualhead", "aads", "acond") or nid in input_layer:
            continue
        h_in, w_in = ins[nid][1:]
        h_out, w_out = outs[nid][1:]
        if h_out < h_in or w_out < w_in:
            found.append(Violation(
                "C3", nid, f"{op} reduces {h_in}x{w_in} to {h_out}x{w_out}; only aads may downsample "
                           "after the input layer"))
    return FeasibilityReport(found, report, budget_flops)


def indicator(spec: ArchSpec, budget_flops: int = DEFAULT_BUDGET_FLOPS) -> int:
    """1 when every constraint holds, else 0."""
    return int(validate_constraints(spec, budget_flops).feasible)
