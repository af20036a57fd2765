"""Train the reference network on the synthetic plates and report the
accuracy, size, cost and latency columns.

    python3 demos/03_train_reference.py --epochs 60
"""

import argparse

from condenser_forge.arch import compile_arch, cost, reference_arch, save_weights
from condenser_forge.synth import GenConfig, generate_dataset, split
from condenser_forge.train import TrainConfig, bench_latency, evaluate, metrics_report, train, write_report_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--momentum", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--weights", default="reference.ldnw")
    ap.add_argument("--report", default="reference_report.json")
    args = ap.parse_args()

    train_set, test_set = split(generate_dataset(GenConfig()), 0.25)
    graph = compile_arch(reference_arch(), seed=args.seed)
    cfg = TrainConfig(epochs=args.epochs, momentum=args.momentum, seed=args.seed)

    def log(epoch, loss, acc):
        if (epoch + 1) % 10 == 0 or epoch == 0:
            print(f"epoch {epoch + 1:3d}  loss {loss:.4f}  train acc {acc:5.1f}%")

    train(graph, train_set, cfg, log=log)
    metrics = evaluate(graph, test_set)
    latency = bench_latency(graph, batch_size=10)
    report = metrics_report(metrics, cost(graph.spec), latency, {"epochs": args.epochs}, name="reference")
    print(f"\ntest accuracy {metrics.accuracy:.2f}%   confusion {metrics.confusion}")
    print(f"params {report['params_m']:.4f}M   FLOPs {report['flops_m']:.2f}M   "
          f"latency {report['median_ms_per_sample']:.2f} ms/sample")
    save_weights(graph, args.weights)
    write_report_json(report, args.report)
    print(f"weights -> {args.weights}, report -> {args.report}")


if __name__ == "__main__":
    main()
