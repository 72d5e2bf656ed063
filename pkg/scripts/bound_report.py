#!/usr/bin/env python3
"""Print a per-layer breakdown of the deep-stack error bound for one
random instance of the depth-sweep family.

    python scripts/bound_report.py --d 8 --n 8 --depth 6 --precision d:8
"""

import argparse
import math

from fptx import errbounds, harness, net
from fptx.fparith import PrecisionSpec, unit_roundoff


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--d", type=int, default=8)
    parser.add_argument("--n", type=int, default=8)
    parser.add_argument("--hidden", type=int, default=8)
    parser.add_argument("--depth", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--precision", type=PrecisionSpec.parse, default="d:8")
    parser.add_argument("--variant", choices=("rms", "ln"), default="ln")
    args = parser.parse_args()

    variant = net.NormVariant.RMS if args.variant == "rms" else net.NormVariant.LAYER
    spec = harness.ExperimentSpec(
        which="depth_sweep", d=args.d, n=args.n, hidden=args.hidden,
        depth=args.depth, precisions=(args.precision,), reps=1,
        seed=args.seed, variant=variant)
    deep, x0 = harness.gen_instance(spec, 0)
    u = unit_roundoff(args.precision)
    report = errbounds.bound_deep(deep, x0, u, per_layer=True)

    print(f"{args.variant} stack, d={args.d} n={args.n} D={args.hidden} "
          f"L={args.depth}, u={u:.2e}")
    factors = report.ingredients["per_layer_factors"]
    bounds = report.ingredients["per_layer_bounds"]
    ok = report.ingredients["per_layer_applicable"]
    for l, (f, b, good) in enumerate(zip(factors, bounds, ok), start=1):
        flag = "" if good else "  (hypotheses fail)"
        print(f"  layer {l:2d}: factor {f:12.4e}   bound {b:12.4e}{flag}")
    print(f"final first-order bound: {report.value:.4e}"
          + ("" if report.applicable else "  (not applicable)"))
    bad = [k for k, v in report.assumptions.items() if not v]
    if bad:
        print("failed hypotheses:")
        for k in bad[:10]:
            print(f"  - {k}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
