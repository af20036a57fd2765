"""Cost breakdown and feasibility verdicts for the reference network.

Prints the per-node FLOP and parameter table, then checks the reference and
two rule-breaking variants against the design constraints.
"""

from condenser_forge.arch import cost, reference_arch, validate_constraints, with_maxpool_downsampling
from condenser_forge.arch.spec import parse_arch, print_arch


def show(name, spec, budget=100_000_000):
    rep = validate_constraints(spec, budget)
    verdict = "feasible" if rep.feasible else "infeasible"
    print(f"{name}: {verdict}")
    for v in rep.violations:
        print(f"    {v.code} at {v.node or '-'}: {v.message}")


def main():
    ref = reference_arch()
    rep = cost(ref)
    print(f"{'node':10s} {'op':9s} {'params':>8s} {'MACs':>10s} {'FLOPs':>11s}")
    for row in rep.per_node:
        print(f"{row.id:10s} {row.op:9s} {row.params:8d} {row.macs:10d} {row.flops:11d}")
    print(f"total: {rep.params} params, {rep.flops_m:.2f}M FLOPs ({rep.convention})\n")

    show("reference", ref)
    show("reference with max-pool downsampling", with_maxpool_downsampling(ref))
    strided = print_arch(ref).replace("node c3 conv c=24,k=3", "node c3 pwconv c=24,s=2")
    show("reference with a strided pointwise conv", parse_arch(strided))
    show("reference under a 5M FLOP budget", ref, budget=5_000_000)


if __name__ == "__main__":
    main()
