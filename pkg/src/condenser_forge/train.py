"""Training with the paired discrepancy loss, evaluation and benchmarking."""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.optim import SGD
from .autodiff.tensor import Tape, Tensor
from .errors import DivergenceError
from .synth import to_arrays


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 5
    lr: float = 1e-3
    momentum: float = 0.0
    lambda_d: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class Metrics:
    accuracy: float
    per_class_accuracy: list[float]
    confusion: list[list[int]]          # confusion[true][pred]
    mean_discrepancy: float
    loss_history: list[float] = field(default_factory=list)
    accuracy_history: list[float] = field(default_factory=list)

    @property
    def count(self) -> int:
        return int(sum(sum(r) for r in self.confusion))

    def to_dict(self) -> dict:
        return asdict(self)


def cross_entropy(p: Tensor, onehot: np.ndarray, eps: float = 1e-9) -> Tensor:
    """Mean over the batch of ``-sum(y * log(max(p, eps)))``."""
    logp = ops.log_clamped(p, eps)
    picked = ops.mul(logp, Tensor(onehot.astype(p.dtype)))
    return ops.scale(ops.sum_all(picked), -1.0 / p.shape[0])


def head_discrepancy(p1: Tensor, p2: Tensor) -> Tensor:
    """Batch mean of the L1 distance between the two heads' probability rows."""
    return ops.scale(ops.sum_all(ops.abs_(ops.sub(p1, p2))), 1.0 / p1.shape[0])


def discrepancy_loss(p1: Tensor, p2: Tensor, agg: Tensor, y, lambda_d: float = 0.1) -> Tensor:
    """CE(agg) + CE(p1)/2 + CE(p2)/2 - lambda_d * mean ||p1 - p2||_1.

    ``y`` is either a one-hot matrix or a vector of class indices.
    """
    y = np.asarray(y)
    onehot = y if y.ndim == 2 else np.eye(agg.shape[1], dtype=agg.dtype)[y]
    loss = ops.add(cross_entropy(agg, onehot),
                   ops.scale(ops.add(cross_entropy(p1, onehot), cross_entropy(p2, onehot)), 0.5))
    if lambda_d:
        loss = ops.sub(loss, ops.scale(head_discrepancy(p1, p2), lambda_d))
    return loss


def _arrays(samples, dtype):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        return samples[0].astype(dtype, copy=False), np.asarray(samples[1])
    return to_arrays(samples, dtype)


def train(graph, train_set, cfg: TrainConfig, log=None):
    """SGD over seeded shuffles; returns ``(graph, Metrics)`` with the history.

    ``train_set`` is a list of PlateSample or an ``(x, y)`` pair. Raises
    :class:`DivergenceError` with epoch/batch context on a non-finite loss.
    """
    x, y = _arrays(train_set, graph.dtype)
    params = graph.parameters()
    opt = SGD(params, lr=cfg.lr, momentum=cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    losses, accs = [], []
    n = len(y)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            opt.zero_grad()
            with Tape() as tape:
                out = graph.forward(x[idx], training=True)
                loss = discrepancy_loss(out.p1, out.p2, out.agg, y[idx], cfg.lambda_d)
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            tape.backward(loss)
            try:
                opt.step()
            except DivergenceError as e:
                raise DivergenceError(f"{e} at epoch {epoch}, batch {b}", epoch=epoch, batch=b) from None
            total += value * len(idx)
            correct += int((predict_from_probs(out.agg.data) == y[idx]).sum())
        losses.append(total / n)
        accs.append(100.0 * correct / n)
        if log is not None:
            log(epoch, losses[-1], accs[-1])
    history = Metrics(accs[-1] if accs else float("nan"), [], [], float("nan"), losses, accs)
    return graph, history


def predict_from_probs(p: np.ndarray) -> np.ndarray:
    """Argmax with ties resolved to the lower class index."""
    return np.argmax(p, axis=1)


def forward_probs(graph, x: np.ndarray, batch: int = 128):
    """Eval-mode forward over a large array in fixed-size chunks."""
    p1s, p2s, aggs = [], [], []
    for start in range(0, len(x), batch):
        out = graph.forward(x[start:start + batch], training=False)
        p1s.append(out.p1.data)
        p2s.append(out.p2.data)
        aggs.append(out.agg.data)
    return np.concatenate(p1s), np.concatenate(p2s), np.concatenate(aggs)


def metrics_from_predictions(y: np.ndarray, pred: np.ndarray, num_classes: int = 2,
                             discrepancy: float = float("nan")) -> Metrics:
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    total = int(conf.sum())
    acc = 100.0 * np.trace(conf) / total if total else float("nan")
    per_class = [100.0 * conf[k, k] / conf[k].sum() if conf[k].sum() else float("nan")
                 for k in range(num_classes)]
    return Metrics(float(acc), per_class, conf.tolist(), float(discrepancy))


def evaluate(graph, test_set) -> Metrics:
    """Accuracy of the aggregate head, in eval mode; weights are untouched."""
    x, y = _arrays(test_set, graph.dtype)
    p1, p2, agg = forward_probs(graph, x)
    disc = float(np.abs(p1 - p2).sum(axis=1).mean()) if len(y) else float("nan")
    return metrics_from_predictions(y, predict_from_probs(agg), agg.shape[1], disc)


def shift_consistency(predict, samples, max_shift: int = 1) -> float:
    """Fraction of (sample, shift) pairs whose predicted class matches the
    unshifted prediction, over circular shifts in ``[-max_shift, max_shift]^2``
    excluding the zero shift.

    ``predict`` maps an NCHW array to class indices; a compiled graph is also
    accepted.
    """
    if max_shift < 1:
        raise ValueError("max_shift must be >= 1")
    if hasattr(predict, "forward"):
        graph = predict
        predict = lambda a: predict_from_probs(forward_probs(graph, a)[2])  # noqa: E731
        dtype = graph.dtype
    else:
        dtype = np.float32
    x, _ = _arrays(samples, dtype)
    base = predict(x)
    agree = total = 0
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.roll(x, (dy, dx), axis=(2, 3))
            agree += int((predict(shifted) == base).sum())
            total += len(base)
    return agree / total if total else 1.0


def environment_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads_env": os.environ.get("CONDENSER_FORGE_THREADS"),
    }


def bench_latency(graph, batch_size: int = 10, warmup: int = 3, reps: int = 20, seed: int = 0) -> dict:
    """Forward-only wall-clock latency per sample, in milliseconds."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch_size,) + tuple(graph.spec.input_shape)).astype(graph.dtype)
    for _ in range(warmup):
        graph.forward(x, training=False)
    per_sample = []
    for _ in range(reps):
        t0 = time.perf_counter()
        graph.forward(x, training=False)
        per_sample.append((time.perf_counter() - t0) * 1e3 / batch_size)
    arr = np.array(per_sample)
    return {
        "batch_size": batch_size,
        "reps": reps,
        "median_ms_per_sample": float(np.median(arr)),
        "p90_ms_per_sample": float(np.percentile(arr, 90)),
        "samples_ms": per_sample,
        "environment": environment_descriptor(),
    }


# --------------------------------------------------------------------------
# reports

TABLE_COLUMNS = ("accuracy_pct", "params_m", "flops_m", "median_ms_per_sample")


def metrics_report(metrics: Metrics, cost_report, latency: dict | None = None, config: dict | None = None,
                   name: str = "model") -> dict:
    return {
        "model": name,
        "accuracy_pct": metrics.accuracy,
        "params_m": cost_report.params_m,
        "flops_m": cost_report.flops_m,
        "median_ms_per_sample": latency["median_ms_per_sample"] if latency else None,
        "flops_convention": cost_report.convention,
        "confusion": metrics.confusion,
        "per_class_accuracy": metrics.per_class_accuracy,
        "mean_head_discrepancy": metrics.mean_discrepancy,
        "config": config or {},
    }


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def write_report_csv(reports: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("model",) + TABLE_COLUMNS)
        for r in reports:
            w.writerow([r["model"]] + [r[c] for c in TABLE_COLUMNS])
