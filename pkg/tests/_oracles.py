"""Independent slow references: nested-loop ops, a counting executor and a
random feasible-spec generator.

Nothing here imports the library's op or cost code; only the DSL parser is
shared, for walking specs.
"""

from __future__ import annotations

import numpy as np


# --------------------------------------------------------------------------
# nested-loop ops


def naive_conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    og = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for i in range(n):
        for o in range(cout):
            g = o // og
            for y in range(ho):
                for z in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(cg):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, g * cg + c, y * stride + u, z * stride + v] * w[o, c, u, v]
                    out[i, o, y, z] = acc
    return out


def naive_max_pool(x, k, s):
    n, c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    out = np.zeros((n, c, ho, wo))
    for i in range(n):
        for j in range(c):
            for y in range(ho):
                for z in range(wo):
                    out[i, j, y, z] = max(x[i, j, y * s + u, z * s + v] for u in range(k) for v in range(k))
    return out


def naive_fc(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            out[i, j] = b[j] + sum(x[i, t] * w[j, t] for t in range(d))
    return out


def _reflect(i, n):
    # mirror about the edge samples, repeating for pads wider than the axis
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def naive_aads(x, f):
    """Reflect-padded binomial blur evaluated only at even positions."""
    taps = {3: [1, 2, 1], 5: [1, 4, 6, 4, 1]}[f]
    k2 = np.outer(taps, taps) / float(sum(taps)) ** 2
    n, c, h, w = x.shape
    r = f // 2
    out = np.zeros((n, c, (h + 1) // 2, (w + 1) // 2))
    for i in range(n):
        for j in range(c):
            for y in range(out.shape[2]):
                for z in range(out.shape[3]):
                    acc = 0.0
                    for u in range(f):
                        for v in range(f):
                            acc += k2[u, v] * x[i, j, _reflect(2 * y + u - r, h), _reflect(2 * z + v - r, w)]
                    out[i, j, y, z] = acc
    return out


# --------------------------------------------------------------------------
# instrumented executor


class Counter:
    def __init__(self):
        self.macs = 0
        self.elementwise = 0
        self.params = 0

    def alloc(self, rng, *shape):
        a = rng.normal(size=shape)
        self.params += a.size
        return a


def _count_conv(cnt, x, w, b, stride, pad, groups):
    """Direct convolution that counts one MAC per multiply-accumulate."""
    cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    og = cout // groups
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        g = o // og
        for y in range(ho):
            for z in range(wo):
                patch = xp[g * cg:(g + 1) * cg, y * stride:y * stride + k, z * stride:z * stride + k]
                out[o, y, z] = float((patch * w[o]).sum()) + (b[o] if b is not None else 0.0)
                cnt.macs += patch.size
    return out


def _ew(cnt, arr):
    cnt.elementwise += arr.size
    return arr


def _maxpool_ceil(x, k, s):
    c, h, w = x.shape
    ho, wo = -(-(h - k) // s) + 1, -(-(w - k) // s) + 1
    out = np.full((c, ho, wo), -np.inf)
    for y in range(ho):
        for z in range(wo):
            out[:, y, z] = x[:, y * s:y * s + k, z * s:z * s + k].max(axis=(1, 2))
    return out


def count_execute(spec, seed: int = 0) -> Counter:
    """Run one sample through ``spec`` with loop kernels, tallying work."""
    from condenser_forge.arch import INPUT_ID  # only for the node id constant

    rng = np.random.default_rng(seed)
    cnt = Counter()
    nodes = {n.id: n for n in spec.nodes}
    preds = {n.id: sorted(s for s, d in spec.edges if d == n.id) for n in spec.nodes}
    done: dict[str, np.ndarray] = {}
    pending = [n.id for n in spec.nodes]
    while pending:
        for nid in pending:
            if all(p in done for p in preds[nid]):
                break
        pending.remove(nid)
        node = nodes[nid]
        if nid == INPUT_ID:
            done[nid] = rng.normal(size=spec.input_shape)
            continue
        ins = [done[p] for p in preds[nid]]
        x = ins[0].copy()
        for other in ins[1:]:
            x = x + other
            cnt.elementwise += x.size
        done[nid] = _count_node(cnt, rng, node.op, dict(node.params), x)
    return cnt


def _count_node(cnt, rng, op, p, x):
    if op == "dualhead":
        d = x.size
        k = p.get("c", 2)
        feats = x.ravel()
        heads = []
        for _ in range(2):
            w, b = cnt.alloc(rng, k, d), cnt.alloc(rng, k)
            logits = np.array([sum(feats[t] * w[j, t] for t in range(d)) + b[j] for j in range(k)])
            cnt.macs += k * d
            e = np.exp(logits - logits.max())
            heads.append(_ew(cnt, e / e.sum()))
        return _ew(cnt, (heads[0] + heads[1]) / 2)
    c, h, w_ = x.shape
    if op == "conv":
        k, s, g = p.get("k", 3), p.get("s", 1), p.get("g", 1)
        pad = p.get("p", k // 2)
        wt, b = cnt.alloc(rng, p["c"], c // g, k, k), cnt.alloc(rng, p["c"])
        return _count_conv(cnt, x, wt, b, s, pad, g)
    if op == "dwconv":
        k, s = p.get("k", 3), p.get("s", 1)
        wt, b = cnt.alloc(rng, c, 1, k, k), cnt.alloc(rng, c)
        return _count_conv(cnt, x, wt, b, s, p.get("p", k // 2), c)
    if op == "pwconv":
        wt, b = cnt.alloc(rng, p["c"], c, 1, 1), cnt.alloc(rng, p["c"])
        return _count_conv(cnt, x, wt, b, p.get("s", 1), 0, 1)
    if op == "aads":
        f = p.get("f", 3)
        taps = {3: [1, 2, 1], 5: [1, 4, 6, 4, 1]}[f]
        k2 = np.outer(taps, taps) / float(sum(taps)) ** 2
        r = f // 2
        out = np.zeros((c, (h + 1) // 2, (w_ + 1) // 2))
        for y in range(out.shape[1]):
            for z in range(out.shape[2]):
                for u in range(f):
                    for v in range(f):
                        out[:, y, z] += k2[u, v] * x[:, _reflect(2 * y + u - r, h), _reflect(2 * z + v - r, w_)]
                        cnt.macs += c
        return out
    if op == "acond":
        e = p.get("c", max(4, c // 2))
        q = _ew(cnt, _maxpool_ceil(x, 2, 2))
        q = _count_conv(cnt, q, cnt.alloc(rng, c, 1, 3, 3), cnt.alloc(rng, c), 1, 1, c)
        q = _count_conv(cnt, q, cnt.alloc(rng, e, c, 1, 1), cnt.alloc(rng, e), 1, 0, 1)
        q = _ew(cnt, np.maximum(q, 0))
        q = _count_conv(cnt, q, cnt.alloc(rng, c, e, 1, 1), cnt.alloc(rng, c), 1, 0, 1)
        q = q.repeat(2, axis=1).repeat(2, axis=2)[:, :h, :w_]
        a = _ew(cnt, 0.5 * (1 + np.tanh(q / 2)))
        gate = _ew(cnt, a * cnt.alloc(rng, c)[:, None, None])
        out = _ew(cnt, x * gate)
        return _ew(cnt, out + x) if p.get("r", 1) else out
    if op == "resblock":
        y = _count_conv(cnt, x, cnt.alloc(rng, c, 1, 3, 3), None, 1, 1, c)
        y = _count_node(cnt, rng, "bn", {}, y)
        y = _ew(cnt, np.maximum(y, 0))
        y = _count_conv(cnt, y, cnt.alloc(rng, c, c, 1, 1), None, 1, 0, 1)
        y = _count_node(cnt, rng, "bn", {}, y)
        return _ew(cnt, x + y)
    if op == "bn":
        gamma, beta = cnt.alloc(rng, c), cnt.alloc(rng, c)
        return _ew(cnt, x * gamma[:, None, None] + beta[:, None, None])
    if op == "relu":
        return _ew(cnt, np.maximum(x, 0))
    if op == "maxpool":
        k = p.get("k", 2)
        s = p.get("s", k)
        return _ew(cnt, naive_max_pool(x[None], k, s)[0])
    if op == "gap":
        return _ew(cnt, x.mean(axis=(1, 2), keepdims=True))
    raise ValueError(op)


# --------------------------------------------------------------------------
# random specs


BODY_OPS = ("conv", "dwconv", "pwconv", "acond", "resblock", "relu", "bn", "aads")


def random_spec_source(rng: np.random.Generator, max_len: int = 6, columns: bool = True) -> str:
    """DSL text of a random feasible network (small extents, tiny budget use)."""
    c = int(rng.integers(1, 4))
    h, w = int(rng.integers(6, 15)), int(rng.integers(6, 15))
    lines = [f"input {c}x{h}x{w}"]
    edges = []
    cols = []
    counter = [0]

    def new(op, params=""):
        counter[0] += 1
        nid = f"n{counter[0]:02d}_{op}"
        lines.append(f"node {nid} {op}" + (f" {params}" if params else ""))
        return nid

    def body(prev_id, ch, hh, ww, preserve):
        """Append one body node; preserve=True keeps the shape unchanged."""
        ops = [o for o in BODY_OPS if not (preserve and o in ("aads",)) and not (o == "aads" and min(hh, ww) < 2)]
        if min(hh, ww) < 2:
            ops = [o for o in ops if o != "acond"]
        op = ops[int(rng.integers(len(ops)))]
        if op == "conv":
            k = int(rng.choice([1, 3, 5]))
            co = ch if preserve else int(rng.integers(2, 9))
            k = min(k, 2 * (min(hh, ww) // 2) + 1)
            nid = new(op, f"c={co},k={k}")
            ch = co
        elif op == "pwconv":
            co = ch if preserve else int(rng.integers(2, 9))
            nid = new(op, f"c={co}")
            ch = co
        elif op == "dwconv":
            nid = new(op, "k=3")
        elif op == "acond":
            nid = new(op, f"c={int(rng.integers(1, 5))},r={int(rng.integers(0, 2))}")
        elif op == "aads":
            nid = new(op, f"f={int(rng.choice([3, 5]))}")
            hh, ww = (hh + 1) // 2, (ww + 1) // 2
        else:
            nid = new(op)
        edges.append((prev_id, nid))
        return nid, ch, hh, ww

    stride = int(rng.integers(1, 3))
    ch = int(rng.integers(2, 7))
    stem = new("conv", f"c={ch},k=3,s={stride}")
    edges.append(("input", stem))
    hh, ww = (h - 1) // stride + 1, (w - 1) // stride + 1
    prev = stem
    for _ in range(int(rng.integers(1, max_len + 1))):
        if columns and rng.random() < 0.25:
            ends = []
            for _ in range(2):
                col, cur = [], prev
                for _ in range(int(rng.integers(1, 3))):
                    cur, _, _, _ = body(cur, ch, hh, ww, preserve=True)
                    col.append(cur)
                cols.append(col)
                ends.append(cur)
            join = new("relu")
            edges += [(e, join) for e in ends]
            prev = join
        else:
            prev, ch, hh, ww = body(prev, ch, hh, ww, preserve=False)
    gap = new("gap")
    head = new("dualhead", f"c={int(rng.integers(2, 4))}")
    edges += [(prev, gap), (gap, head)]
    lines += [f"edge {a} {b}" for a, b in edges]
    lines += ["column " + " ".join(col) for col in cols]
    lines.append(f"output {head}")
    return "\n".join(lines) + "\n"
