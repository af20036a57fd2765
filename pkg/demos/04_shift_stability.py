"""AADS against plain max-pool downsampling under one-pixel shifts.

Trains the reference network and its max-pool twin with the same seed and
counts how often a prediction survives a +-1 pixel circular shift.

    python3 demos/04_shift_stability.py --epochs 20 --seeds 0 1 2
"""

import argparse

from condenser_forge.arch import compile_arch, reference_arch, with_maxpool_downsampling
from condenser_forge.synth import GenConfig, generate_dataset, split
from condenser_forge.train import TrainConfig, evaluate, shift_consistency, train


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = ap.parse_args()

    train_set, test_set = split(generate_dataset(GenConfig()), 0.25)
    probe = test_set[:200]
    variants = {"aads": reference_arch(), "maxpool": with_maxpool_downsampling(reference_arch())}
    for seed in args.seeds:
        for name, spec in variants.items():
            g = compile_arch(spec, seed=seed)
            train(g, train_set, TrainConfig(epochs=args.epochs, momentum=0.9, seed=seed))
            print(f"seed {seed}  {name:8s} test acc {evaluate(g, test_set).accuracy:5.1f}%  "
                  f"shift consistency {shift_consistency(g, probe):.4f}")


if __name__ == "__main__":
    main()
