"""Tour of the synthetic plate generator.

Renders a few plates, writes them as PGM files next to their defect-free
twins, and prints how faint each defect is against the background.

    python3 demos/01_dataset_tour.py --out /tmp/plates
"""

import argparse
from pathlib import Path

import numpy as np

from condenser_forge.synth import DEFECT_KINDS, GenConfig, generate_dataset, render_plate, split, write_pgm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="plates_tour")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = GenConfig()
    print("one plate per defect kind, seed 42:")
    clean = render_plate(42, cfg)
    write_pgm(out / "clean.pgm", clean.image)
    for kind in DEFECT_KINDS:
        bad = render_plate(42, cfg, [kind])
        diff = np.abs(bad.image.astype(int) - clean.image.astype(int))
        write_pgm(out / f"{kind}.pgm", bad.image)
        print(f"  {kind:12s} peak change {diff.max():3d} grey levels over {int((diff > 2).sum()):4d} pixels")

    data = generate_dataset(cfg)
    train, test = split(data, 0.25)
    n_def = sum(s.target for s in data)
    print(f"\nfull dataset: {len(data)} plates, {n_def} defective; split {len(train)} train / {len(test)} test")
    print(f"images written to {out}/")


if __name__ == "__main__":
    main()
