"""Dense tensor value and the tape that records differentiable ops.

Ops record onto the innermost active :class:`Tape`. Outside a tape (or when
no input requires a gradient) they are plain numpy computations, which keeps
evaluation cheap.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import DivergenceError, GradientError

DEFAULT_DTYPE = np.float32

_debug = False
_local = threading.local()


def _tape_stack() -> list["Tape"]:
    # one stack per thread, so concurrent training runs never share records
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def set_debug(flag: bool) -> None:
    """Enable finiteness assertions on every op output."""
    global _debug
    _debug = bool(flag)


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """Numeric array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype.kind == "f" else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Arithmetic sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def sum(self):
        from . import ops
        return ops.sum_all(self)

    def mean(self):
        from . import ops
        return ops.mean_all(self)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


@dataclass
class Record:
    """One op application on the tape."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered log of op applications; use as a context manager."""

    records: list[Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _tape_stack().pop()
        assert popped is self

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> list[Tensor]:
        return backward(self, loss)


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result and record it when any input needs a gradient."""
    if _debug and not np.all(np.isfinite(data)) and all(np.all(np.isfinite(t.data)) for t in inputs):
        raise DivergenceError(f"{op} produced non-finite values from finite inputs")
    needs = any(t.requires_grad for t in inputs)
    tape = active_tape()
    out = Tensor(data, requires_grad=needs and tape is not None, dtype=data.dtype)
    if out.requires_grad:
        tape.records.append(Record(op, tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> list[Tensor]:
    """Accumulate dloss/dtheta into every leaf that requires a gradient.

    Records are visited in exact reverse recording order. Returns the list of
    leaf tensors that received a gradient.
    """
    if loss.size != 1:
        raise GradientError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss is not reachable from any recorded op")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(r.output) for r in tape.records}
    if id(loss) not in produced:
        raise GradientError("loss was not recorded on this tape")
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = t
    out = []
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.astype(t.dtype, copy=False).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g
        out.append(t)
    return out
