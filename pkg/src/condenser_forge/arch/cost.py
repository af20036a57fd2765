"""Closed-form parameter and FLOP accounting.

Multiply-accumulates (convolutions, FC layers, the AADS blur) are converted
with ``flops_per_mac`` (default 2). Everything elementwise (activations,
pools, batch norm, joins, gating) costs 1 FLOP per output element. Nearest
upsampling is a copy and costs nothing. Batch-norm running statistics are
buffers, not parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .shapes import infer_shapes
from .spec import ArchSpec


@dataclass
class NodeCost:
    id: str
    op: str
    params: int
    macs: int
    elementwise: int
    flops: int


@dataclass
class CostReport:
    params: int
    flops: int
    flops_per_mac: int
    per_node: list[NodeCost] = field(default_factory=list)

    @property
    def convention(self) -> str:
        return f"1 MAC = {self.flops_per_mac} FLOPs; elementwise ops 1 FLOP per output element"

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_m(self) -> float:
        return self.flops / 1e6

    def as_dict(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "convention": self.convention,
            "per_node": [vars(n) for n in self.per_node],
        }


def node_cost(op: str, p: dict, in_shape: tuple, out_shape: tuple, fan_in: int) -> tuple[int, int, int]:
    """(params, MACs, elementwise FLOPs) of one node for a single sample."""
    join = (fan_in - 1) * _numel(in_shape) if fan_in > 1 else 0
    if op == "input":
        return 0, 0, 0
    if op in ("conv", "dwconv", "pwconv"):
        cin = in_shape[0]
        cout, ho, wo = out_shape
        k, g = p["k"], p["g"]
        per_out = (cin // g) * k * k
        return cout * per_out + cout, cout * ho * wo * per_out, join
    if op == "aads":
        c, ho, wo = out_shape
        return 0, c * ho * wo * p["f"] ** 2, join
    if op == "acond":
        c, h, w = in_shape
        e = p["c"]
        hc, wc = (h + 1) // 2, (w + 1) // 2
        small = hc * wc
        params = (9 * c + c) + (e * c + e) + (c * e + c) + c
        macs = 9 * c * small + e * c * small + c * e * small
        elem = c * small + e * small + 3 * c * h * w + (c * h * w if p["r"] else 0)
        return params, macs, elem + join
    if op == "resblock":
        c, h, w = in_shape
        hw = h * w
        params = 9 * c + 2 * c + c * c + 2 * c
        macs = 9 * c * hw + c * c * hw
        elem = 4 * c * hw  # bn, relu, bn, skip add
        return params, macs, elem + join
    if op == "bn":
        return 2 * in_shape[0], 0, _numel(out_shape) + join
    if op in ("relu", "maxpool", "gap"):
        return 0, 0, _numel(out_shape) + join
    if op == "dualhead":
        d = _numel(in_shape)
        k = p["c"]
        return 2 * (k * d + k), 2 * k * d, 3 * k + join  # two softmaxes + mean
    raise ValueError(f"no cost rule for op {op!r}")


def _numel(shape) -> int:
    n = 1
    for v in shape:
        n *= int(v)
    return n


def cost(spec: ArchSpec, flops_per_mac: int = 2, batch: int = 1) -> CostReport:
    order, ins, outs, hp = infer_shapes(spec)
    preds = spec.preds()
    nm = spec.node_map()
    rows = []
    for nid in order:
        op = nm[nid].op
        params, macs, elem = node_cost(op, hp[nid], ins[nid], outs[nid], len(preds[nid]))
        macs *= batch
        elem *= batch
        rows.append(NodeCost(nid, op, params, macs, elem, flops_per_mac * macs + elem))
    return CostReport(
        params=sum(r.params for r in rows),
        flops=sum(r.flops for r in rows),
        flops_per_mac=flops_per_mac,
        per_node=rows,
    )
