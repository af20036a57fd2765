"""ArchSpec data model, the line-oriented DSL parser and its printer.

Grammar (``#`` starts a comment)::

    input 1x64x64
    node stem conv k=3,s=1,c=12
    node head dualhead c=2
    edge input stem
    edge stem head
    column a1 a2
    output head
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field

from ..errors import DSLError

INPUT_ID = "input"

# op -> (allowed keys, required keys)
OP_TABLE: dict[str, tuple[frozenset, frozenset]] = {
    "conv": (frozenset("cksgp"), frozenset("c")),
    "dwconv": (frozenset("ksp"), frozenset()),
    "pwconv": (frozenset("cs"), frozenset("c")),
    "aads": (frozenset("f"), frozenset()),
    "acond": (frozenset("cr"), frozenset()),
    "resblock": (frozenset(), frozenset()),
    "relu": (frozenset(), frozenset()),
    "bn": (frozenset(), frozenset()),
    "maxpool": (frozenset("ks"), frozenset()),
    "gap": (frozenset(), frozenset()),
    "dualhead": (frozenset("c"), frozenset()),
}
OPS = tuple(OP_TABLE)

_ID_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")
_SHAPE_RE = re.compile(r"^(\d+)x(\d+)x(\d+)$")


@dataclass
class Node:
    id: str
    op: str
    params: dict[str, int] = field(default_factory=dict)

    def get(self, key: str, default=None):
        return self.params.get(key, default)


@dataclass
class ArchSpec:
    """A DAG of layer definitions with one input node and one output head."""

    input_shape: tuple[int, int, int]
    nodes: list[Node]
    edges: list[tuple[str, str]]
    output: str
    columns: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.edges = [tuple(e) for e in self.edges]

    # -- lookups ----------------------------------------------------------
    def node_map(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def preds(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for s, d in self.edges:
            out[d].append(s)
        return {k: sorted(v) for k, v in out.items()}

    def succs(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n.id: [] for n in self.nodes}
        for s, d in self.edges:
            out[s].append(d)
        return {k: sorted(v) for k, v in out.items()}

    def topo_order(self) -> list[str]:
        """Kahn's algorithm; ties broken by node id so the order is stable."""
        indeg = {n.id: 0 for n in self.nodes}
        for _, d in self.edges:
            indeg[d] += 1
        succ = self.succs()
        ready = [k for k, v in indeg.items() if v == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            k = heapq.heappop(ready)
            order.append(k)
            for d in succ[k]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    heapq.heappush(ready, d)
        if len(order) != len(self.nodes):
            raise DSLError("graph contains a cycle through: "
                           + ", ".join(sorted(k for k in indeg if k not in order)))
        return order

    def copy(self) -> "ArchSpec":
        return ArchSpec(self.input_shape, [Node(n.id, n.op, dict(n.params)) for n in self.nodes],
                        list(self.edges), self.output, [list(c) for c in self.columns])

    def structure_key(self):
        """Order-insensitive key for structural equality."""
        return (
            self.input_shape,
            tuple(sorted((n.id, n.op, tuple(sorted(n.params.items()))) for n in self.nodes)),
            tuple(sorted(set(self.edges))),
            self.output,
            tuple(sorted(tuple(c) for c in self.columns)),
        )

    def structurally_equal(self, other: "ArchSpec") -> bool:
        return self.structure_key() == other.structure_key()

    def __str__(self):
        return print_arch(self)


def _parse_params(text: str, lineno: int, col: int) -> dict[str, int]:
    params: dict[str, int] = {}
    offset = col
    for item in re.split(r"[,\s]+", text.strip()):
        if not item:
            continue
        pos = text.find(item)
        if "=" not in item:
            raise DSLError(f"expected key=value, got {item!r}", lineno, offset + pos)
        k, v = item.split("=", 1)
        try:
            params[k] = int(v)
        except ValueError:
            raise DSLError(f"value for {k!r} must be an integer, got {v!r}", lineno, offset + pos) from None
    return params


def parse_arch(text: str) -> ArchSpec:
    """Parse DSL source into an :class:`ArchSpec`."""
    input_shape = None
    input_line = None
    nodes: list[Node] = []
    node_lines: dict[str, int] = {}
    edges: list[tuple[str, str]] = []
    edge_lines: list[int] = []
    columns: list[list[str]] = []
    column_lines: list[int] = []
    output = None
    output_line = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        toks = line.split()
        kw = toks[0]
        col_of = lambda i: line.find(toks[i], sum(len(t) for t in toks[:i])) + 1  # noqa: E731
        if kw == "input":
            if input_shape is not None:
                raise DSLError("duplicate input declaration", lineno, 1)
            if len(toks) != 2 or not _SHAPE_RE.match(toks[1]):
                raise DSLError(f"expected 'input <C>x<H>x<W>', got {' '.join(toks[1:])!r}", lineno, col_of(1) if len(toks) > 1 else 1)
            input_shape = tuple(int(v) for v in _SHAPE_RE.match(toks[1]).groups())
            if min(input_shape) < 1:
                raise DSLError("input extents must be >= 1", lineno, col_of(1))
            input_line = lineno
        elif kw == "node":
            if len(toks) < 3:
                raise DSLError("expected 'node <id> <op> [k=v,...]'", lineno, 1)
            nid, op = toks[1], toks[2]
            if not _ID_RE.match(nid):
                raise DSLError(f"invalid node id {nid!r}", lineno, col_of(1))
            if nid == INPUT_ID or nid in node_lines:
                first = input_line if nid == INPUT_ID else node_lines[nid]
                raise DSLError(f"duplicate node id {nid!r} (first defined on line {first})", lineno, col_of(1))
            if op not in OP_TABLE:
                raise DSLError(f"unknown op {op!r}; expected one of {', '.join(OPS)}", lineno, col_of(2))
            pstart = col_of(2) + len(op) - 1
            params = _parse_params(line[pstart:], lineno, pstart + 1)
            allowed, required = OP_TABLE[op]
            for k in params:
                if k not in allowed:
                    raise DSLError(f"op {op!r} does not take parameter {k!r}", lineno, col_of(2))
            for k in required:
                if k not in params:
                    raise DSLError(f"op {op!r} requires parameter {k!r}", lineno, col_of(2))
            nodes.append(Node(nid, op, params))
            node_lines[nid] = lineno
        elif kw == "edge":
            if len(toks) != 3:
                raise DSLError("expected 'edge <src> <dst>'", lineno, 1)
            edges.append((toks[1], toks[2]))
            edge_lines.append(lineno)
        elif kw == "column":
            if len(toks) < 2:
                raise DSLError("expected 'column <id...>'", lineno, 1)
            columns.append(toks[1:])
            column_lines.append(lineno)
        elif kw == "output":
            if output is not None:
                raise DSLError("duplicate output declaration", lineno, 1)
            if len(toks) != 2:
                raise DSLError("expected 'output <id>'", lineno, 1)
            output, output_line = toks[1], lineno
        else:
            raise DSLError(f"unknown statement {kw!r}", lineno, 1)

    if input_shape is None:
        raise DSLError("missing 'input <C>x<H>x<W>' declaration")
    if output is None:
        raise DSLError("missing 'output <id>' declaration")
    known = set(node_lines) | {INPUT_ID}
    seen_edges = set()
    for (s, d), ln in zip(edges, edge_lines):
        for end, which in ((s, 2), (d, 3)):
            if end not in known:
                raise DSLError(f"edge endpoint {end!r} is not a declared node", ln, which)
        if (s, d) in seen_edges:
            raise DSLError(f"duplicate edge {s} -> {d}", ln, 1)
        if s == d:
            raise DSLError(f"self-loop on {s!r}", ln, 1)
        seen_edges.add((s, d))
    for cols, ln in zip(columns, column_lines):
        for cid in cols:
            if cid not in node_lines:
                raise DSLError(f"column member {cid!r} is not a declared node", ln)
    if output not in node_lines:
        raise DSLError(f"output {output!r} is not a declared node", output_line, 8)

    spec = ArchSpec(input_shape, [Node(INPUT_ID, "input", {})] + nodes, edges, output, columns)
    try:
        spec.topo_order()
    except DSLError:
        cyc = _cycle_edge_line(spec, edge_lines)
        raise DSLError(f"edge {edges[cyc[0]][0]} -> {edges[cyc[0]][1]} closes a cycle", cyc[1], 1) from None
    return spec


def _cycle_edge_line(spec: ArchSpec, edge_lines: list[int]) -> tuple[int, int]:
    """Index and line of the first edge whose addition creates a cycle."""
    adj: dict[str, set[str]] = {n.id: set() for n in spec.nodes}

    def reaches(a, b):
        stack, seen = [a], set()
        while stack:
            k = stack.pop()
            if k == b:
                return True
            if k in seen:
                continue
            seen.add(k)
            stack.extend(adj[k])
        return False

    for i, (s, d) in enumerate(spec.edges):
        if reaches(d, s):
            return i, edge_lines[i]
        adj[s].add(d)
    return 0, edge_lines[0] if edge_lines else None


def print_arch(spec: ArchSpec) -> str:
    """Canonical DSL text; ``parse_arch(print_arch(s))`` equals ``s``."""
    c, h, w = spec.input_shape
    lines = [f"input {c}x{h}x{w}"]
    for n in spec.nodes:
        if n.op == "input":
            continue
        ps = ",".join(f"{k}={v}" for k, v in sorted(n.params.items()))
        lines.append(f"node {n.id} {n.op}" + (f" {ps}" if ps else ""))
    for s, d in spec.edges:
        lines.append(f"edge {s} {d}")
    for col in spec.columns:
        lines.append("column " + " ".join(col))
    lines.append(f"output {spec.output}")
    return "\n".join(lines) + "\n"


def chain(input_shape, layers, output_id: str | None = None) -> ArchSpec:
    """Build a linear ArchSpec from ``(id, op, params)`` triples."""
    nodes = [Node(INPUT_ID, "input", {})]
    edges = []
    prev = INPUT_ID
    for nid, op, params in layers:
        nodes.append(Node(nid, op, dict(params)))
        edges.append((prev, nid))
        prev = nid
    return ArchSpec(tuple(input_shape), nodes, edges, output_id or prev)
