"""Compile an ArchSpec into an executable, trainable graph."""

from __future__ import annotations

import zlib

import numpy as np

from .. import blocks
from ..autodiff import ops
from ..autodiff.ops import BatchNormState
from ..autodiff.tensor import Tensor
from .shapes import infer_shapes
from .spec import ArchSpec


def node_rng(seed: int, node_id: str) -> np.random.Generator:
    """Per-node generator, independent of declaration order."""
    return np.random.default_rng([int(seed), zlib.crc32(node_id.encode("utf-8"))])


class Graph:
    """Executable form of an ArchSpec with freshly initialized parameters."""

    def __init__(self, spec: ArchSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.order, self.in_shapes, self.out_shapes, self.hparams = infer_shapes(spec)
        self.preds = spec.preds()
        self.ops = {n.id: n.op for n in spec.nodes}
        self.modules: dict[str, object] = {}
        for nid in self.order:
            self.modules[nid] = self._init_node(nid)

    def _init_node(self, nid: str):
        op = self.ops[nid]
        p = self.hparams[nid]
        shape = self.in_shapes[nid]
        rng = node_rng(self.seed, nid)
        dt = self.dtype
        if op in ("conv", "dwconv", "pwconv"):
            cin = shape[0]
            fan_in = (cin // p["g"]) * p["k"] * p["k"]
            return {
                "w": blocks.he_normal(rng, (p["c"], cin // p["g"], p["k"], p["k"]), fan_in, dt),
                "b": blocks.zeros((p["c"],), dt),
            }
        if op == "bn":
            c = shape[0]
            return {"gamma": blocks.ones((c,), dt), "beta": blocks.zeros((c,), dt),
                    "state": BatchNormState.fresh(c, dt)}
        if op == "acond":
            return blocks.AttentionCondenserParams.init(shape[0], p["c"], rng, dt, residual=bool(p["r"]))
        if op == "resblock":
            return blocks.ResBlockParams.init(shape[0], rng, dt)
        if op == "dualhead":
            d = int(np.prod(shape))
            return blocks.DualHeadParams.init(d, p["c"], rng, dt)
        return None

    # -- parameters -------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        """Trainable tensors, keyed ``<node>.<field>``, sorted by name."""
        out = {}
        for nid in self.order:
            m = self.modules[nid]
            if m is None:
                continue
            items = m.items() if isinstance(m, dict) else m.named_tensors().items()
            for k, v in items:
                if isinstance(v, Tensor):
                    out[f"{nid}.{k}"] = v
        return dict(sorted(out.items()))

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def bn_states(self) -> dict[str, BatchNormState]:
        out = {}
        for nid in self.order:
            m = self.modules[nid]
            if isinstance(m, dict) and "state" in m:
                out[f"{nid}.bn"] = m["state"]
            elif isinstance(m, blocks.ResBlockParams):
                out[f"{nid}.bn1"] = m.bn1
                out[f"{nid}.bn2"] = m.bn2
        return out

    def named_tensors(self) -> dict[str, np.ndarray]:
        """Everything that defines the forward function, including BN buffers."""
        out = {k: v.data for k, v in self.named_parameters().items()}
        for k, st in self.bn_states().items():
            out[f"{k}.running_mean"] = st.running_mean
            out[f"{k}.running_var"] = st.running_var
        return dict(sorted(out.items()))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- execution --------------------------------------------------------
    def forward(self, x, training: bool = False) -> blocks.HeadOutput:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise ValueError(f"input shape {x.shape[1:]} != spec input {tuple(self.spec.input_shape)}")
        values: dict[str, Tensor] = {}
        remaining = {nid: 0 for nid in self.order}
        for nid in self.order:
            for s in self.preds[nid]:
                remaining[s] += 1
        result = None
        for nid in self.order:
            op = self.ops[nid]
            if op == "input":
                values[nid] = x
                continue
            ins = [values[s] for s in self.preds[nid]]
            h = ops.add_n(ins)
            for s in self.preds[nid]:
                remaining[s] -= 1
                if remaining[s] == 0:
                    del values[s]
            out = self.apply_node(nid, h, training)
            if op == "dualhead":
                result = out
            else:
                values[nid] = out
        return result

    __call__ = forward

    def apply_node(self, nid: str, h: Tensor, training: bool):
        op = self.ops[nid]
        p = self.hparams[nid]
        m = self.modules[nid]
        if op in ("conv", "dwconv", "pwconv"):
            return ops.conv2d(h, m["w"], m["b"], stride=p["s"], pad=p["p"], groups=p["g"])
        if op == "bn":
            return ops.batchnorm2d(h, m["gamma"], m["beta"], m["state"], training)
        if op == "relu":
            return ops.relu(h)
        if op == "aads":
            return blocks.aads_downsample(h, p["f"])
        if op == "acond":
            return blocks.attention_condenser(h, m)
        if op == "resblock":
            return blocks.dwsep_residual_block(h, m, training)
        if op == "maxpool":
            return ops.max_pool(h, p["k"], p["s"])
        if op == "gap":
            return ops.global_avg_pool(h)
        if op == "dualhead":
            return blocks.dual_head_forward(ops.flatten(h), m)
        raise ValueError(f"unknown op {op!r}")


def compile_arch(spec: ArchSpec, seed: int = 0, dtype=np.float32) -> Graph:
    """Shape-check ``spec`` and build a graph with parameters drawn from ``seed``."""
    return Graph(spec, seed=seed, dtype=dtype)
