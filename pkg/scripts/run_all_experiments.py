#!/usr/bin/env python3
"""Run the four experiments at their default desk scale and write CSVs
(and figures, when the fptx-figures package is installed).

    python scripts/run_all_experiments.py --outdir results --workers 2
"""

import argparse
import time
from pathlib import Path

from fptx import harness


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", default="results")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--reps", type=int, default=None,
                        help="override the per-figure default repetition count")
    parser.add_argument("--figs", type=int, nargs="+", default=[1, 2, 3, 4])
    args = parser.parse_args()

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        from fptx_figures import render
    except ImportError:
        render = None

    for fig in args.figs:
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.reps is not None:
            overrides["reps"] = args.reps
        spec = harness.ExperimentSpec.figure(fig, **overrides)
        t0 = time.time()
        rows = harness.run_experiment(spec, workers=args.workers)
        csv_path = outdir / f"fig{fig}.csv"
        harness.emit_csv(rows, csv_path)
        print(f"fig{fig}: {len(rows)} rows -> {csv_path}  ({time.time() - t0:.0f}s)")
        if render is not None:
            png_path = outdir / f"fig{fig}.png"
            result = render(fig, csv_path, png_path)
            print(f"fig{fig}: {result.curves} curve(s) -> {png_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
