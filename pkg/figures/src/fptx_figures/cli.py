"""fptx-plot: render an experiment CSV as one of the four figures."""

from __future__ import annotations

import argparse
import sys

from .plots import render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fptx-plot",
        description="Render a rounding-error experiment CSV as a figure.")
    parser.add_argument("--fig", type=int, choices=(1, 2, 3, 4), required=True)
    parser.add_argument("--csv", required=True, help="input CSV path")
    parser.add_argument("--out", required=True, help="output image path (png)")
    args = parser.parse_args(argv)
    result = render(args.fig, args.csv, args.out)
    line = f"figure {args.fig}: {result.curves} curve(s) -> {result.path}"
    if result.slopes:
        slopes = ", ".join(f"{k[1]} ({k[0]}): {v:.2f}"
                           for k, v in result.slopes.items())
        line += f"  [fitted slopes: {slopes}]"
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
