"""Structural validation and shape inference for ArchSpecs."""

from __future__ import annotations

from ..errors import ShapeError
from .spec import INPUT_ID, ArchSpec, Node


def resolved(node: Node, in_shape: tuple[int, ...]) -> dict[str, int]:
    """Hyperparameters with defaults filled in for a given input shape."""
    p = dict(node.params)
    op = node.op
    if op == "conv":
        p.setdefault("k", 3)
        p.setdefault("s", 1)
        p.setdefault("g", 1)
        p.setdefault("p", p["k"] // 2)
    elif op == "dwconv":
        p.setdefault("k", 3)
        p.setdefault("s", 1)
        p.setdefault("p", p["k"] // 2)
        p["c"] = in_shape[0]
        p["g"] = in_shape[0]
    elif op == "pwconv":
        p.setdefault("s", 1)
        p.update(k=1, g=1, p=0)
    elif op == "aads":
        p.setdefault("f", 3)
    elif op == "acond":
        p.setdefault("c", max(4, in_shape[0] // 2))
        p.setdefault("r", 1)
    elif op == "maxpool":
        p.setdefault("k", 2)
        p.setdefault("s", p["k"])
    elif op == "dualhead":
        p.setdefault("c", 2)
    return p


def check_structure(spec: ArchSpec) -> None:
    """Graph-level invariants: one input, one dualhead output, no dead ends."""
    ids = [n.id for n in spec.nodes]
    if len(set(ids)) != len(ids):
        raise ShapeError("duplicate node ids")
    nm = spec.node_map()
    if INPUT_ID not in nm or nm[INPUT_ID].op != "input":
        raise ShapeError("spec has no input node")
    for s, d in spec.edges:
        if s not in nm or d not in nm:
            raise ShapeError(f"edge {s} -> {d} references an unknown node")
    preds, succs = spec.preds(), spec.succs()
    if preds[INPUT_ID]:
        raise ShapeError("input node cannot have incoming edges")
    if spec.output not in nm:
        raise ShapeError(f"output {spec.output!r} is not a node")
    if nm[spec.output].op != "dualhead":
        raise ShapeError(f"output node {spec.output!r} must be a dualhead, got {nm[spec.output].op}")
    for n in spec.nodes:
        if n.op == "input":
            if n.id != INPUT_ID:
                raise ShapeError(f"only {INPUT_ID!r} may be an input node")
            continue
        if not preds[n.id]:
            raise ShapeError(f"node {n.id!r} has no incoming edge")
        if n.op == "dualhead" and n.id != spec.output:
            raise ShapeError(f"dualhead {n.id!r} is not the declared output")
        if n.id != spec.output and not succs[n.id]:
            raise ShapeError(f"node {n.id!r} does not feed the output")
    if succs[spec.output]:
        raise ShapeError(f"output node {spec.output!r} cannot have successors")
    spec.topo_order()


def _out_extent(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def infer_shapes(spec: ArchSpec) -> tuple[list[str], dict[str, tuple], dict[str, tuple], dict[str, dict]]:
    """Return (order, input shape per node, output shape per node, resolved params).

    Multi-input nodes sum their inputs, which must agree exactly.
    """
    check_structure(spec)
    order = spec.topo_order()
    preds = spec.preds()
    nm = spec.node_map()
    ins: dict[str, tuple] = {}
    outs: dict[str, tuple] = {}
    hp: dict[str, dict] = {}
    for nid in order:
        node = nm[nid]
        if node.op == "input":
            outs[nid] = tuple(spec.input_shape)
            ins[nid] = outs[nid]
            hp[nid] = {}
            continue
        ps = preds[nid]
        shape = outs[ps[0]]
        for other in ps[1:]:
            if outs[other] != shape:
                raise ShapeError(
                    f"shape mismatch at join {nid!r}: edge {ps[0]} -> {nid} carries {shape}, "
                    f"edge {other} -> {nid} carries {outs[other]}", dim=nid)
        ins[nid] = shape
        if node.op != "dualhead" and len(shape) != 3:
            raise ShapeError(f"node {nid!r} ({node.op}) needs a CxHxW input from {ps[0]!r}, got {shape}",
                             dim=nid)
        p = resolved(node, shape)
        hp[nid] = p
        outs[nid] = _node_out_shape(nid, node.op, p, shape, ps)
    return order, ins, outs, hp


def _node_out_shape(nid, op, p, shape, ps):
    if op == "dualhead":
        if p["c"] < 2:
            raise ShapeError(f"dualhead {nid!r} needs >= 2 classes", dim=nid)
        return (p["c"],)
    c, h, w = shape
    src = ps[0]
    if op in ("conv", "dwconv", "pwconv"):
        k, s, g, pad = p["k"], p["s"], p["g"], p["p"]
        cout = p["c"]
        if k < 1 or s < 1 or pad < 0 or cout < 1:
            raise ShapeError(f"node {nid!r}: invalid conv hyperparameters {p}", dim=nid)
        if g < 1 or c % g or cout % g:
            raise ShapeError(f"node {nid!r}: groups={g} does not divide Cin={c} (from {src!r}) "
                             f"and Cout={cout}", dim=nid)
        ho, wo = _out_extent(h, k, s, pad), _out_extent(w, k, s, pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"node {nid!r}: kernel {k} larger than input {h}x{w} from {src!r}", dim=nid)
        return (cout, ho, wo)
    if op == "aads":
        if p["f"] not in (3, 5):
            raise ShapeError(f"node {nid!r}: AADS filter size must be 3 or 5", dim=nid)
        if h < 2 or w < 2:
            raise ShapeError(f"node {nid!r}: AADS needs H,W >= 2, got {h}x{w} from {src!r}", dim=nid)
        return (c, (h + 1) // 2, (w + 1) // 2)
    if op == "acond":
        if h < 2 or w < 2:
            raise ShapeError(f"node {nid!r}: attention condenser needs H,W >= 2", dim=nid)
        if p["c"] < 1:
            raise ShapeError(f"node {nid!r}: embed channels must be >= 1", dim=nid)
        return shape
    if op == "maxpool":
        k, s = p["k"], p["s"]
        if k < 1 or s < 1 or k > h or k > w:
            raise ShapeError(f"node {nid!r}: pool window {k} does not fit {h}x{w} from {src!r}", dim=nid)
        return (c, (h - k) // s + 1, (w - k) // s + 1)
    if op == "gap":
        return (c, 1, 1)
    if op in ("relu", "bn", "resblock"):
        return shape
    raise ShapeError(f"node {nid!r}: unknown op {op!r}", dim=nid)
