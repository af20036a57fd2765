"""Constrained architecture search.

A seeded evolutionary loop: a residual prototype seeds generation 0, each
later generation keeps the elites and fills the rest with single mutations of
them. Infeasible candidates are logged but never trained. Feasible ones are
scored by NetScore on the accuracy of a short proxy training run.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .arch.constraints import DEFAULT_BUDGET_FLOPS, FeasibilityReport, validate_constraints
from .arch.cost import CostReport
from .arch.graph import compile_arch
from .arch.shapes import _node_out_shape, check_structure, infer_shapes, resolved
from .arch.spec import INPUT_ID, ArchSpec, Node, parse_arch, print_arch
from .errors import DivergenceError, DSLError, ShapeError
from .synth import split, to_arrays
from .train import TrainConfig, evaluate, train

THREADS_ENV = "CONDENSER_FORGE_THREADS"
MAX_MUTATION_ATTEMPTS = 20


def netscore(acc_pct: float, params_m: float, flops_m: float,
             alpha: float = 2.0, beta: float = 0.5, gamma: float = 0.5) -> float:
    """``20 * log10(acc**alpha / (params**beta * flops**gamma))``."""
    for name, v in (("acc_pct", acc_pct), ("params_m", params_m), ("flops_m", flops_m),
                    ("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not v > 0:
            raise ValueError(f"netscore: {name} must be > 0, got {v}")
    return 20.0 * (alpha * math.log10(acc_pct) - beta * math.log10(params_m) - gamma * math.log10(flops_m))


# --------------------------------------------------------------------------
# prototype


def seed_prototype(input_shape=(1, 64, 64)) -> ArchSpec:
    """Small residual network: strided stem, then resblock/AADS stages."""
    c, h, w = (int(v) for v in input_shape)
    lines = [f"input {c}x{h}x{w}",
             "node stem conv k=3,s=2,c=16", "node stem_bn bn", "node stem_relu relu", "node res1 resblock"]
    chain = ["input", "stem", "stem_bn", "stem_relu", "res1"]
    extent = min((h + 1) // 2, (w + 1) // 2)
    width = 16
    for stage in (2, 3):
        if extent < 4:
            break
        width += 8
        ids = [f"ds{stage - 1}", f"c{stage}", f"c{stage}_bn", f"c{stage}_relu", f"res{stage}"]
        lines += [f"node {ids[0]} aads f=3", f"node {ids[1]} conv k=3,c={width}",
                  f"node {ids[2]} bn", f"node {ids[3]} relu", f"node {ids[4]} resblock"]
        chain += ids
        extent = (extent + 1) // 2
    lines += ["node gap gap", "node head dualhead c=2"]
    chain += ["gap", "head"]
    lines += [f"edge {a} {b}" for a, b in zip(chain[:-1], chain[1:])]
    lines.append("output head")
    return parse_arch("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# mutation


class _Skip(Exception):
    """The chosen mutation does not apply to this spec."""


def _fresh_id(spec: ArchSpec, base: str) -> str:
    taken = {n.id for n in spec.nodes}
    k = 1
    while f"{base}{k}" in taken:
        k += 1
    return f"{base}{k}"


def _insert_on_edge(spec: ArchSpec, edge, op: str, params: dict, base: str) -> str:
    s, d = edge
    nid = _fresh_id(spec, base)
    spec.nodes.append(Node(nid, op, dict(params)))
    i = spec.edges.index(edge)
    spec.edges[i:i + 1] = [(s, nid), (nid, d)]
    return nid


def _splice_out(spec: ArchSpec, nid: str) -> None:
    preds = [s for s, d in spec.edges if d == nid]
    succs = [d for s, d in spec.edges if s == nid]
    spec.nodes = [n for n in spec.nodes if n.id != nid]
    edges = [e for e in spec.edges if nid not in e]
    for p in preds:
        for q in succs:
            if (p, q) not in edges:
                edges.append((p, q))
    spec.edges = edges
    spec.columns = [c for c in ([m for m in col if m != nid] for col in spec.columns) if c]


def _body_edges(spec: ArchSpec, outs, min_extent: int = 1):
    """Edges strictly inside the network body, whose carried map is >= min_extent."""
    nm = spec.node_map()
    out = []
    for s, d in spec.edges:
        if s == INPUT_ID or nm[d].op in ("dualhead", "gap") or nm[s].op == "gap":
            continue
        if min(outs[s][1:]) >= min_extent:
            out.append((s, d))
    return out


def _reaches(spec: ArchSpec, a: str, b: str) -> bool:
    succ = spec.succs()
    stack, seen = [a], set()
    while stack:
        k = stack.pop()
        if k == b:
            return True
        if k not in seen:
            seen.add(k)
            stack.extend(succ[k])
    return False


def _pick(rng, items):
    if not items:
        raise _Skip
    return items[int(rng.integers(len(items)))]


def _m_insert_acond(spec, rng, outs):
    edge = _pick(rng, _body_edges(spec, outs, min_extent=2))
    c = outs[edge[0]][0]
    _insert_on_edge(spec, edge, "acond", {"c": max(4, c // 2)}, "acond")


def _m_insert_resblock(spec, rng, outs):
    _insert_on_edge(spec, _pick(rng, _body_edges(spec, outs)), "resblock", {}, "res")


def _m_remove_resblock(spec, rng, outs):
    _splice_out(spec, _pick(rng, sorted(n.id for n in spec.nodes if n.op == "resblock")))


def _m_rescale_channels(spec, rng, outs):
    node = _pick(rng, [n for n in spec.nodes if n.op in ("conv", "pwconv")])
    c = node.params["c"]
    new = c * 2 if rng.random() < 0.5 else max(4, c // 2)
    g = node.params.get("g", 1)
    if new == c or new % g:
        raise _Skip
    node.params["c"] = new


def _m_add_aads(spec, rng, outs):
    _insert_on_edge(spec, _pick(rng, _body_edges(spec, outs, min_extent=4)), "aads", {"f": 3}, "ds")


def _m_remove_aads(spec, rng, outs):
    _splice_out(spec, _pick(rng, sorted(n.id for n in spec.nodes if n.op == "aads")))


def _column_of(spec: ArchSpec) -> dict[str, int]:
    return {m: i for i, col in enumerate(spec.columns) for m in col}


def _m_add_cross_edge(spec, rng, outs):
    col = _column_of(spec)
    pairs = [(a, b) for a in col for b in col
             if col[a] != col[b] and (a, b) not in spec.edges and outs[a][1:] == outs[b][1:]
             and not _reaches(spec, b, a)]
    spec.edges.append(_pick(rng, sorted(pairs)))


def _m_remove_cross_edge(spec, rng, outs):
    col = _column_of(spec)
    preds, succs = spec.preds(), spec.succs()
    cands = [(s, d) for s, d in spec.edges
             if s in col and d in col and col[s] != col[d] and len(succs[s]) > 1 and len(preds[d]) > 1]
    spec.edges.remove(_pick(rng, cands))


def _linear_run(spec: ArchSpec, rng) -> list[str]:
    nm = spec.node_map()
    preds, succs = spec.preds(), spec.succs()
    fixed = ("input", "gap", "dualhead")

    def simple(k):
        return nm[k].op not in fixed and len(preds[k]) == 1 and len(succs[k]) == 1

    start = _pick(rng, sorted(k for k in nm if simple(k) and preds[k][0] != INPUT_ID))
    run = [start]
    for _ in range(int(rng.integers(0, 3))):
        nxt = succs[run[-1]][0]
        if not simple(nxt):
            break
        run.append(nxt)
    return run


def _m_duplicate_column(spec, rng, outs):
    if spec.columns:
        members = list(_pick(rng, spec.columns))
        declare = [members]
    else:
        members = _linear_run(spec, rng)
        declare = [members, None]
    if any(spec.node(m).op in ("input", "gap", "dualhead") for m in members):
        raise _Skip
    inside = set(members)
    rename = {m: _fresh_id(spec, f"{m}_dup") for m in members}
    for m in members:
        n = spec.node(m)
        spec.nodes.append(Node(rename[m], n.op, dict(n.params)))
    for s, d in list(spec.edges):
        if s in inside or d in inside:
            spec.edges.append((rename.get(s, s), rename.get(d, d)))
    if declare[-1] is None:
        spec.columns.append(members)
    spec.columns.append([rename[m] for m in members])


MUTATIONS: dict[str, Callable] = {
    "insert_acond": _m_insert_acond,
    "insert_resblock": _m_insert_resblock,
    "remove_resblock": _m_remove_resblock,
    "rescale_channels": _m_rescale_channels,
    "add_aads": _m_add_aads,
    "remove_aads": _m_remove_aads,
    "add_cross_edge": _m_add_cross_edge,
    "remove_cross_edge": _m_remove_cross_edge,
    "duplicate_column": _m_duplicate_column,
}


def repair_joins(spec: ArchSpec, max_rounds: int = 64) -> ArchSpec:
    """Insert pointwise adapters where a join's inputs disagree only in channels.

    Every input is mapped to the channel count of the join's first (sorted)
    predecessor. Spatial disagreements are not repairable and raise.
    """
    for _ in range(max_rounds):
        check_structure(spec)
        preds = spec.preds()
        nm = spec.node_map()
        outs: dict[str, tuple] = {}
        fixed = False
        for nid in spec.topo_order():
            node = nm[nid]
            if node.op == "input":
                outs[nid] = spec.input_shape
                continue
            ps = preds[nid]
            target = outs[ps[0]]
            bad = [p for p in ps[1:] if outs[p] != target]
            if bad:
                if any(outs[p][1:] != target[1:] for p in bad):
                    raise ShapeError(f"join {nid!r} mixes spatial extents", dim=nid)
                for p in bad:
                    _insert_on_edge(spec, (p, nid), "pwconv", {"c": target[0]}, "adapt")
                fixed = True
                break
            outs[nid] = _node_out_shape(nid, node.op, resolved(node, target), target, ps)
        if not fixed:
            return spec
    raise ShapeError("join repair did not converge")


def mutate_with_kind(spec: ArchSpec, seed: int) -> tuple[ArchSpec, str | None]:
    """Like :func:`mutate`, also naming the mutation applied (None if none)."""
    rng = np.random.default_rng(seed)
    _, _, outs, _ = infer_shapes(spec)
    names = list(MUTATIONS)
    for _ in range(MAX_MUTATION_ATTEMPTS):
        kind = names[int(rng.integers(len(names)))]
        out = spec.copy()
        try:
            MUTATIONS[kind](out, rng, outs)
            out = parse_arch(print_arch(repair_joins(out)))
            infer_shapes(out)
        except (_Skip, ShapeError, DSLError):
            continue
        if not out.structurally_equal(spec):
            return out, kind
    return spec.copy(), None


def mutate(spec: ArchSpec, seed: int) -> ArchSpec:
    """One random structural edit; the result always shape-checks."""
    return mutate_with_kind(spec, seed)[0]


# --------------------------------------------------------------------------
# evaluation


class ProxyResult(NamedTuple):
    accuracy: float
    diverged: bool


def _as_split(dataset, train_fraction: float, dtype=np.float32):
    """Accept samples, a (train, test) sample pair, or a pair of (x, y) arrays."""
    if isinstance(dataset, tuple) and len(dataset) == 2:
        tr, te = dataset
    else:
        tr, te = split(dataset, train_fraction, seed=0)
    conv = (lambda s: s if isinstance(s, tuple) else to_arrays(s, dtype))
    return conv(tr), conv(te)


def proxy_evaluate(spec: ArchSpec, dataset, proxy_epochs: int, seed: int = 0,
                   momentum: float = 0.9, train_fraction: float = 0.25) -> ProxyResult:
    """Held-out accuracy after a short training run; 0 with a flag on divergence."""
    train_set, test_set = _as_split(dataset, train_fraction)
    graph = compile_arch(spec, seed=seed)
    try:
        train(graph, train_set, TrainConfig(epochs=proxy_epochs, momentum=momentum, seed=seed))
    except DivergenceError:
        return ProxyResult(0.0, True)
    return ProxyResult(evaluate(graph, test_set).accuracy, False)


@dataclass
class SearchConfig:
    seeds: tuple[int, ...] = (0,)
    budget_flops: int = DEFAULT_BUDGET_FLOPS
    iterations: int = 20
    population: int = 8
    elite: int = 2
    proxy_epochs: int = 3
    alpha: float = 2.0
    beta: float = 0.5
    gamma: float = 0.5
    seed: int = 0
    momentum: float = 0.9
    train_fraction: float = 0.25
    threads: int | None = None

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if not 1 <= self.elite <= self.population:
            raise ValueError("elite must satisfy 1 <= elite <= population")
        if self.proxy_epochs < 0:
            raise ValueError("proxy_epochs must be >= 0")
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("netscore coefficients must be > 0")

    def worker_count(self) -> int:
        if self.threads is not None:
            return max(0, int(self.threads))
        raw = os.environ.get(THREADS_ENV, "0")
        try:
            return max(0, int(raw))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


@dataclass
class Candidate:
    spec: ArchSpec
    cost: CostReport
    feasibility: FeasibilityReport
    iteration: int
    mutation: str | None = None
    proxy_acc: float | None = None
    u_value: float | None = None
    diverged: bool = False
    text: str = field(init=False)

    def __post_init__(self):
        self.text = print_arch(self.spec)

    @property
    def feasible(self) -> bool:
        return self.feasibility.feasible

    def rank_key(self):
        return -math.inf if self.u_value is None else self.u_value

    def record(self, best_u: float | None = None) -> dict:
        """One JSON-serializable log line."""
        u = self.u_value if self.u_value is not None and math.isfinite(self.u_value) else None
        return {
            "iteration": self.iteration,
            "spec": self.text,
            "params": self.cost.params,
            "flops": self.cost.flops,
            "flops_convention": self.cost.convention,
            "feasible": self.feasible,
            "violations": [vars(v) for v in self.feasibility.violations],
            "proxy_acc": self.proxy_acc,
            "u_value": u,
            "diverged": self.diverged,
            "mutation": self.mutation,
            "best_u": best_u,
        }


def _score(spec: ArchSpec, data, cfg: SearchConfig, rep: FeasibilityReport) -> tuple[float, float, bool]:
    results = [proxy_evaluate(spec, data, cfg.proxy_epochs, s, cfg.momentum) for s in cfg.seeds]
    if any(r.diverged for r in results):
        return 0.0, -math.inf, True
    acc = float(np.mean([r.accuracy for r in results]))
    if acc <= 0:
        return acc, -math.inf, False
    u = netscore(acc, rep.cost.params_m, rep.cost.flops_m, cfg.alpha, cfg.beta, cfg.gamma)
    return acc, u, False


def explore(cfg: SearchConfig, dataset, log: Callable[[dict], None] | None = None) -> list[Candidate]:
    """Run the search; returns every proxy-evaluated candidate, best U first.

    ``log`` receives one record per newly assessed candidate (feasible or
    not) in a fixed order, regardless of the worker count.
    """
    data = _as_split(dataset, cfg.train_fraction)
    input_shape = tuple(int(v) for v in data[0][0].shape[1:])
    rng = np.random.default_rng(cfg.seed)
    seen: set[str] = set()
    evaluated: list[Candidate] = []
    elites: list[Candidate] = []
    best_u: float | None = None
    workers = cfg.worker_count()
    prototype = seed_prototype(input_shape)

    for it in range(cfg.iterations):
        parents = [e.spec for e in elites] or [prototype]
        batch: list[tuple[ArchSpec, str | None]] = []
        if not elites:
            batch.append((prototype, None))
        while len(batch) + len(elites) < cfg.population:
            parent = parents[int(rng.integers(len(parents)))]
            child, kind = mutate_with_kind(parent, int(rng.integers(2 ** 31)))
            batch.append((child, kind))

        fresh: list[Candidate] = []
        for spec, kind in batch:
            text = print_arch(spec)
            if text in seen:
                continue
            seen.add(text)
            rep = validate_constraints(spec, cfg.budget_flops)
            fresh.append(Candidate(spec, rep.cost, rep, it, kind))

        todo = [c for c in fresh if c.feasible]
        job = (lambda c: _score(c.spec, data, cfg, c.feasibility))
        if workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scores = list(pool.map(job, todo))
        else:
            scores = [job(c) for c in todo]
        for c, (acc, u, div) in zip(todo, scores):
            c.proxy_acc, c.u_value, c.diverged = acc, u, div
            evaluated.append(c)

        # stable sort keeps first-evaluated order among ties
        ranked = sorted(evaluated, key=lambda c: -c.rank_key())
        elites = ranked[:cfg.elite]
        if elites and math.isfinite(elites[0].rank_key()):
            best_u = elites[0].u_value
        for c in fresh:
            if log is not None:
                log(c.record(best_u))
    return sorted(evaluated, key=lambda c: -c.rank_key())


def check_search_log(records: list[dict]) -> list[str]:
    """Problems found in a search log: evaluated infeasible candidates or a
    best-so-far U that decreases."""
    problems = []
    prev = None
    for i, r in enumerate(records):
        if r.get("proxy_acc") is not None and not r["feasible"]:
            problems.append(f"record {i}: infeasible candidate was evaluated")
        b = r.get("best_u")
        if b is not None:
            if prev is not None and b < prev - 1e-12:
                problems.append(f"record {i}: best U fell from {prev} to {b}")
            prev = b
    return problems


__all__ = [
    "Candidate", "MUTATIONS", "ProxyResult", "SearchConfig", "THREADS_ENV", "check_search_log",
    "explore", "mutate", "mutate_with_kind", "netscore", "proxy_evaluate", "repair_joins",
    "seed_prototype",
]
