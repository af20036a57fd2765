"""``condenser-forge`` command line.

Exit codes: 0 success or feasible, 1 infeasible verdict, 2 usage, I/O or
parse error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .arch import compile_arch, cost, load_weights, parse_arch, print_arch, save_weights, validate_constraints
from .arch.constraints import DEFAULT_BUDGET_FLOPS
from .errors import DivergenceError, ForgeError
from .explorer import SearchConfig, check_search_log, explore
from .synth import GenConfig, generate_dataset, read_dataset, split, write_dataset
from .train import (TrainConfig, bench_latency, evaluate, metrics_report, train, write_report_csv,
                    write_report_json)

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
MANIFEST_NAME = "run_manifest.json"


class CLIError(Exception):
    """Reported on stderr with exit code 2."""


# --------------------------------------------------------------------------
# run manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_dir(path, exclude=(MANIFEST_NAME,)) -> str:
    """Hash of every file name and content under ``path``, in sorted order."""
    h = hashlib.sha256()
    root = Path(path)
    for p in sorted(q for q in root.rglob("*") if q.is_file() and q.name not in exclude):
        h.update(str(p.relative_to(root)).encode() + b"\0")
        h.update(sha256_file(p).encode())
    return h.hexdigest()


def content_hash(path) -> str:
    p = Path(path)
    return sha256_dir(p) if p.is_dir() else sha256_file(p)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str = __version__
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = content_hash(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = content_hash(path)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _manifest_path_for(output) -> Path:
    p = Path(output)
    return p / MANIFEST_NAME if p.is_dir() else p.with_name(p.name + ".manifest.json")


def _config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


# --------------------------------------------------------------------------
# helpers


def _parse_hw(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _parse_chw(text: str) -> tuple[int, int, int]:
    try:
        c, h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected CxHxW, got {text!r}") from None
    return c, h, w


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise CLIError(f"cannot read {path}: {e.strerror or e}") from None


def _load_arch(path, input_shape=None):
    spec = parse_arch(_read_text(path))
    if input_shape is not None:
        spec.input_shape = tuple(input_shape)
    return spec


def _load_data(path):
    if not Path(path).is_dir():
        raise CLIError(f"data directory not found: {path}")
    return read_dataset(path)


def _emit(args, payload: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, indent=2, sort_keys=True, default=str))
    else:
        print(human)


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    h, w = args.size
    cfg = GenConfig(count=args.count, defect_fraction=args.defect_frac, image_size=(h, w), seed=args.seed)
    out = Path(args.out)
    try:
        dataset = generate_dataset(cfg)
        write_dataset(dataset, out, cfg)
    except OSError as e:
        raise CLIError(f"cannot write dataset to {out}: {e.strerror or e}") from None
    m = RunManifest("gen-data", _config(args), args.seed)
    m.add_output(out)
    m.write(_manifest_path_for(out))
    n_def = sum(s.target for s in dataset)
    _emit(args, {"out": str(out), "count": len(dataset), "defective": n_def, "hash": m.outputs[str(out)]},
          f"wrote {len(dataset)} plates ({n_def} defective) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load_arch(args.arch)
    data = _load_data(args.data)
    train_set, test_set = split(data, args.train_fraction, seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, momentum=args.momentum,
                      lambda_d=args.lambda_d, seed=args.seed)
    graph = compile_arch(spec, seed=args.seed)

    def log(epoch, loss, acc):
        if not args.json and args.verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs}  loss {loss:.4f}  train acc {acc:.1f}%", file=sys.stderr)

    try:
        _, history = train(graph, train_set, cfg, log=log)
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    metrics = evaluate(graph, test_set)
    config = {"train": asdict(cfg), "arch": str(args.arch), "data": str(args.data),
              "train_fraction": args.train_fraction}
    report = metrics_report(metrics, cost(spec), None, config, name=Path(args.arch).stem)
    report["loss_history"] = [float(v) for v in history.loss_history]
    try:
        save_weights(graph, args.out)
        write_report_json(report, args.report)
        if args.csv:
            write_report_csv([report], args.csv)
    except OSError as e:
        raise CLIError(f"cannot write output: {e.strerror or e}") from None
    m = RunManifest("train", _config(args), args.seed)
    m.add_input(args.arch)
    m.add_input(args.data)
    for p in (args.out, args.report) + ((args.csv,) if args.csv else ()):
        m.add_output(p)
    m.write(_manifest_path_for(args.out))
    _emit(args, report, f"test accuracy {metrics.accuracy:.2f}%  params {report['params_m']:.4f}M  "
                        f"FLOPs {report['flops_m']:.2f}M  weights -> {args.out}")
    return EXIT_OK


def _cost_payload(spec, rep) -> dict:
    return {"params": rep.cost.params, "flops": rep.cost.flops, "convention": rep.cost.convention,
            **rep.as_dict()}


def cmd_cost(args, verdict: bool = False) -> int:
    spec = _load_arch(args.arch, args.input)
    rep = validate_constraints(spec, args.budget)
    payload = _cost_payload(spec, rep)
    lines = [f"params {rep.cost.params}", f"flops {rep.cost.flops}", f"convention {rep.cost.convention}"]
    if verdict:
        lines.append(f"feasible {int(rep.feasible)}")
        lines += [f"violation {v.code} {v.node or '-'}: {v.message}" for v in rep.violations]
    else:
        payload = {k: payload[k] for k in ("params", "flops", "convention")}
        payload["per_node"] = [vars(n) for n in rep.cost.per_node]
    _emit(args, payload, "\n".join(lines))
    if verdict:
        return EXIT_OK if rep.feasible else EXIT_INFEASIBLE
    return EXIT_OK


def cmd_validate(args) -> int:
    return cmd_cost(args, verdict=True)


def cmd_search(args) -> int:
    data = _load_data(args.data)
    try:
        cfg = SearchConfig(seeds=args.seeds or (args.seed,), budget_flops=args.budget, iterations=args.iters,
                           population=args.pop, elite=args.elite, proxy_epochs=args.proxy_epochs,
                           seed=args.seed, momentum=args.momentum)
    except ValueError as e:
        raise CLIError(f"invalid search configuration: {e}") from None
    report = Path(args.report)
    records: list[dict] = []
    try:
        with open(report, "w") as f:
            def log(rec):
                records.append(rec)
                f.write(json.dumps(rec, sort_keys=True) + "\n")
            ranked = explore(cfg, data, log=log)
    except OSError as e:
        raise CLIError(f"cannot write {report}: {e.strerror or e}") from None
    problems = check_search_log(records)
    m = RunManifest("search", _config(args), args.seed)
    m.add_input(args.data)
    m.add_output(report)
    payload = {"report": str(report), "evaluated": len(ranked), "logged": len(records), "problems": problems}
    if ranked:
        best = ranked[0]
        best_path = report.with_name(report.stem + ".best.arch")
        best_path.write_text(print_arch(best.spec))
        m.add_output(best_path)
        payload.update(best_spec=str(best_path), u_value=best.u_value, params=best.cost.params,
                       flops=best.cost.flops, proxy_acc=best.proxy_acc)
        human = (f"best {best_path}  U {best.u_value:.3f}  params {best.cost.params}  "
                 f"FLOPs {best.cost.flops}  proxy acc {best.proxy_acc:.1f}%")
    else:
        human = "no feasible candidate was found"
    m.write(_manifest_path_for(report))
    _emit(args, payload, human)
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _load_arch(args.arch)
    graph = compile_arch(spec)
    if not Path(args.weights).is_file():
        raise CLIError(f"weights file not found: {args.weights}")
    load_weights(graph, args.weights)
    res = bench_latency(graph, batch_size=args.batch, warmup=args.warmup, reps=args.reps)
    human = (f"batch {res['batch_size']}  median {res['median_ms_per_sample']:.3f} ms/sample  "
             f"p90 {res['p90_ms_per_sample']:.3f} ms/sample\n"
             + "\n".join(f"{k}: {v}" for k, v in res["environment"].items()))
    _emit(args, res, human)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="condenser-forge", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(func=func)
        return p

    g = add("gen-data", cmd_gen_data, "generate the synthetic plate dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=822)
    g.add_argument("--defect-frac", type=float, default=422 / 822)
    g.add_argument("--size", type=_parse_hw, default=(64, 64), metavar="HxW")
    g.add_argument("--seed", type=int, default=0)

    t = add("train", cmd_train, "train an architecture and write weights plus a report")
    t.add_argument("--arch", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=5)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--momentum", type=float, default=0.0)
    t.add_argument("--lambda-d", type=float, default=0.1)
    t.add_argument("--train-fraction", type=float, default=0.25)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", default="weights.ldnw")
    t.add_argument("--report", default="report.json")
    t.add_argument("--csv", default=None, help="also write the table columns as CSV")
    t.add_argument("-v", "--verbose", action="store_true", help="per-epoch progress on stderr")

    for name, func, help_ in (("cost", cmd_cost, "parameter and FLOP counts"),
                              ("validate", cmd_validate, "feasibility verdict with violations")):
        c = add(name, func, help_)
        c.add_argument("--arch", required=True)
        c.add_argument("--input", type=_parse_chw, default=None, metavar="CxHxW")
        c.add_argument("--budget", type=int, default=DEFAULT_BUDGET_FLOPS)

    s = add("search", cmd_search, "constrained architecture search")
    s.add_argument("--data", required=True)
    s.add_argument("--iters", type=int, default=20)
    s.add_argument("--pop", type=int, default=8)
    s.add_argument("--elite", type=int, default=2)
    s.add_argument("--proxy-epochs", type=int, default=3)
    s.add_argument("--budget", type=int, default=DEFAULT_BUDGET_FLOPS)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, nargs="+", default=None, help="proxy training seeds")
    s.add_argument("--report", default="search.jsonl")

    b = add("bench", cmd_bench, "forward-only latency")
    b.add_argument("--arch", required=True)
    b.add_argument("--weights", required=True)
    b.add_argument("--batch", type=int, default=10)
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CLIError, ForgeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
