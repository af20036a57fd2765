"""A short constrained architecture search on a small plate set.

Every candidate is logged; infeasible ones are reported with their violated
rules and never trained.

    python3 demos/05_search.py --iters 5
"""

import argparse

from condenser_forge.arch import print_arch
from condenser_forge.explorer import SearchConfig, check_search_log, explore
from condenser_forge.synth import GenConfig, generate_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=5)
    ap.add_argument("--count", type=int, default=200)
    args = ap.parse_args()

    data = generate_dataset(GenConfig(count=args.count))
    cfg = SearchConfig(iterations=args.iters, population=8, elite=2, proxy_epochs=3)

    def log(rec):
        if rec["feasible"]:
            print(f"it {rec['iteration']:2d}  {rec['mutation'] or 'prototype':18s} "
                  f"acc {rec['proxy_acc']:5.1f}%  U {rec['u_value'] or float('nan'):7.3f}  "
                  f"best {rec['best_u'] or float('nan'):7.3f}")
        else:
            codes = ",".join(v["code"] for v in rec["violations"])
            print(f"it {rec['iteration']:2d}  {rec['mutation']:18s} skipped ({codes})")

    records = []
    ranked = explore(cfg, data, lambda r: (records.append(r), log(r)))
    print("\nlog problems:", check_search_log(records) or "none")
    print(f"\nbest of {len(ranked)} evaluated candidates "
          f"({ranked[0].cost.params} params, {ranked[0].cost.flops_m:.2f}M FLOPs):\n")
    print(print_arch(ranked[0].spec))


if __name__ == "__main__":
    main()
