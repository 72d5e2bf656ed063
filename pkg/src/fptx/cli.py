"""Command-line interface.

Subcommands:
    check-jacobians   validate analytic Jacobians against finite differences
    condition         condition numbers of one layer at a random instance
    bound             first-order error bound for a layer, a block, or a deep stack
    experiment        run one of the four experiments and write a CSV
    selftest          quick internal consistency checks
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import conditioning, errbounds, harness, jacobians, net
from .fparith import PrecisionSpec, round_to_precision, unit_roundoff
from .jacobians import LayerKind, LayerPoint

LAYER_CHOICES = ("centring", "rmsnorm", "layernorm", "tlp", "simscores",
                 "softmax", "attention")


def _random_point(layer: str, d: int, n: int, hidden: int,
                  rng: np.random.Generator) -> LayerPoint:
    cfg = net.TransformerConfig(
        rng.standard_normal((hidden, d)), rng.standard_normal(hidden),
        rng.standard_normal((d, hidden)), rng.standard_normal(d),
        rng.standard_normal((d, d)), rng.standard_normal((d, d)),
        rng.standard_normal((d, d)))
    x = rng.standard_normal(d)
    xm = rng.standard_normal((d, n))
    return {
        "centring": LayerPoint.centring(x),
        "rmsnorm": LayerPoint.rmsnorm(x),
        "layernorm": LayerPoint.layernorm(x),
        "tlp": LayerPoint.tlp(cfg, x),
        "simscores": LayerPoint.simscores(cfg, xm),
        "softmax": LayerPoint.softmax(rng.standard_normal(n)),
        "attention": LayerPoint.attention(cfg, xm),
    }[layer]


def cmd_check_jacobians(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = {}
    for layer in LAYER_CHOICES:
        errs = []
        trials = 0
        while trials < args.trials:
            pt = _random_point(layer, args.d, args.n, args.hidden, rng)
            try:
                ja = jacobians.analytic_jacobian(pt)
                jf = jacobians.fd_jacobian_for_point(pt)
            except Exception:
                continue
            trials += 1
            denom = np.linalg.norm(ja) or 1.0
            errs.append(np.linalg.norm(ja - jf) / denom)
        worst[layer] = max(errs)
        status = "ok" if worst[layer] <= args.tol else "FAIL"
        print(f"{layer:12s} worst relative Frobenius error {worst[layer]:.3e}  [{status}]")
    bad = [k for k, v in worst.items() if v > args.tol]
    return 1 if bad else 0


def cmd_condition(args) -> int:
    rng = np.random.default_rng(args.seed)
    pt = _random_point(args.layer, args.d, args.n, args.hidden, rng)
    for kind in ("normwise", "mixed", "componentwise"):
        rep = conditioning.condition_generic(pt, kind, p=2, q=2)
        line = f"{kind:14s} generic = {rep.value:.6e}"
        try:
            closed = conditioning.condition_closed_form(pt, kind, p=2, q=2)
            line += f"   {closed.method} = {closed.value:.6e}"
        except ValueError:
            pass
        print(line)
    return 0


def cmd_bound(args) -> int:
    rng = np.random.default_rng(args.seed)
    spec = args.precision[0] if args.precision else PrecisionSpec.decimal(6)
    u = unit_roundoff(spec)
    variant = net.NormVariant.RMS if args.variant == "rms" else net.NormVariant.LAYER
    d, n, hidden = args.d, args.n, args.hidden
    if args.target in LAYER_CHOICES:
        pt = _random_point(args.target, d, n, hidden, rng)
        rep = errbounds.bound_layer_perturbed(LayerKind(args.target), u,
                                              args.rho_in, x=pt.x, cfg=pt.cfg)
    elif args.target == "block":
        pt = _random_point("attention", d, n, hidden, rng)
        rep = errbounds.bound_block(pt.cfg, pt.x, u, variant, rho_in=args.rho_in)
    elif args.target == "deep":
        espec = harness.ExperimentSpec(
            which="depth_sweep", d=d, n=n, hidden=hidden, depth=args.depth,
            precisions=(spec,), reps=1, seed=args.seed, variant=variant)
        deep, x0 = harness.gen_instance(espec, 0)
        rep = errbounds.bound_deep(deep, x0, u)
    else:
        print(f"unknown bound target {args.target!r}", file=sys.stderr)
        return 2
    print(f"target            : {rep.target}")
    print(f"unit roundoff     : {rep.u:.3e}   incoming error: {rep.rho_in:.3e}")
    print(f"first-order bound : {rep.value:.6e}")
    print(f"applicable        : {rep.applicable}")
    for key, val in rep.assumptions.items():
        print(f"  hypothesis {'ok ' if val else 'BAD'}: {key}")
    for key, val in rep.ingredients.items():
        if isinstance(val, float):
            print(f"  {key} = {val:.6e}")
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        spec = harness.load_config(args.config)
    else:
        fig = int(args.figure.removeprefix("fig"))
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.reps is not None:
            overrides["reps"] = args.reps
        if args.precision:
            overrides["precisions"] = tuple(args.precision)
        if args.variant:
            overrides["variant"] = (net.NormVariant.RMS if args.variant == "rms"
                                    else net.NormVariant.LAYER)
        spec = harness.ExperimentSpec.figure(fig, **overrides)
    rows = harness.run_experiment(spec, workers=args.workers)
    harness.emit_csv(rows, args.out)
    print(f"{spec.which}: wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_selftest(args) -> int:
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'PASS' if ok else 'FAIL'}: {name}")
        failures += 0 if ok else 1

    spec24 = PrecisionSpec.binary(24)
    vals = np.random.default_rng(0).uniform(-1e6, 1e6, 20000)
    check("binary(24) rounding matches hardware single precision",
          bool(np.all(round_to_precision(vals, spec24)
                      == vals.astype(np.float32).astype(np.float64))))

    x = np.array([1.0, 3.0])
    check("layer normalization of (1,3) is (-1,1)",
          bool(np.allclose(net.layer_norm(x), [-1.0, 1.0])))

    pt = LayerPoint.softmax(np.array([0.3, -1.2, 0.7]))
    ja = jacobians.analytic_jacobian(pt)
    jf = jacobians.fd_jacobian_for_point(pt)
    check("softmax Jacobian matches finite differences",
          float(np.linalg.norm(ja - jf)) < 1e-6)

    rng = np.random.default_rng(1)
    s = rng.standard_normal(6)
    rep = errbounds.bound_layer_fresh(LayerKind.SOFTMAX, PrecisionSpec.decimal(6), x=s)
    meas, _ = errbounds.measure_error(lambda ctx: net.softmax(s, ctx),
                                      PrecisionSpec.decimal(6))
    check("softmax error below its first-order bound", meas <= rep.value * 1.1)

    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fptx",
        description="Transformer forward passes under simulated low precision: "
                    "Jacobians, condition numbers, error bounds, experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_dims(p, depth=False):
        p.add_argument("--d", type=int, default=6, help="token dimension")
        p.add_argument("--n", type=int, default=5, help="sequence length")
        p.add_argument("--hidden", type=int, default=8, help="perceptron width")
        if depth:
            p.add_argument("--depth", type=int, default=3, help="number of blocks")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("check-jacobians", help="analytic vs finite-difference Jacobians")
    add_dims(p)
    p.add_argument("--trials", type=int, default=25)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_jacobians)

    p = sub.add_parser("condition", help="condition numbers of one layer")
    p.add_argument("layer", choices=LAYER_CHOICES)
    add_dims(p)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("bound", help="first-order rounding-error bound")
    p.add_argument("target", choices=LAYER_CHOICES + ("block", "deep"))
    add_dims(p, depth=True)
    p.add_argument("--rho-in", type=float, default=0.0, dest="rho_in")
    p.add_argument("--precision", type=PrecisionSpec.parse, action="append",
                   default=[], help="d:<digits> or b:<bits> (repeatable)")
    p.add_argument("--variant", choices=("rms", "ln"), default="ln")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("experiment", help="run an experiment, write CSV")
    p.add_argument("figure", choices=("fig1", "fig2", "fig3", "fig4"))
    p.add_argument("--config", help="YAML experiment description (overrides figure defaults)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--precision", type=PrecisionSpec.parse, action="append",
                   default=[], help="d:<digits> or b:<bits> (repeatable)")
    p.add_argument("--variant", choices=("rms", "ln"))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("selftest", help="quick internal consistency checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
